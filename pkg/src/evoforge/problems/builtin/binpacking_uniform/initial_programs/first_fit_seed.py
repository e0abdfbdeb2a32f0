def entrypoint(context):
    results = []
    for instance in context["instances"]:
        capacity = instance["capacity"]
        loads = []
        assignment = []
        for item in instance["items"]:
            for b in range(len(loads)):
                if loads[b] + item <= capacity + 1e-12:
                    loads[b] += item
                    assignment.append(b)
                    break
            else:
                loads.append(item)
                assignment.append(len(loads) - 1)
        results.append(assignment)
    return results
