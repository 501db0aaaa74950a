# tessera/routers/experiments.py
"""
Experiments API Router
Runs a command synchronously and returns its summary and per-trial rows.
"""
from typing import Literal

from fastapi import APIRouter

from ..config import ExperimentConfig
from ..exceptions import AcceptanceError
from ..services.experiments import run_experiment
from ..services.reporting import to_plain

router = APIRouter()

TabularCommand = Literal["cross", "tail", "pc", "couple", "faces", "hilhorst"]


@router.post("/{command}")
def run(command: TabularCommand, config: ExperimentConfig):
    """
    Run one experiment.

    The body is an experiment config; its `command` field is replaced by the
    path. With `check: true` a failed acceptance check answers 422.
    """
    config = config.model_copy(update={"command": command})
    result = run_experiment(config)
    if config.check and result.check_passed is False:
        raise AcceptanceError("; ".join(result.check_messages))
    return to_plain({
        "command": command,
        "config": result.config,
        "summary": result.summary,
        "rows": result.rows,
        "check_passed": result.check_passed,
    })
