from .tasks import TaskSpec, get_task, registry
