"""Incremental domain adaptation: training, expansion strategies and checkpoints."""
from .adam import AdamState, adam_step
from .checkpoint import (Checkpoint, CheckpointError, CheckpointFormatError,
                         CheckpointIntegrityError, CheckpointShapeError,
                         CheckpointVersionError, load_checkpoint, load_into,
                         read_checkpoint, save_checkpoint, write_checkpoint)
from .expansion import Parity, expand_vocab, freeze_old, param_parity
from .schedule import (EWC, FINETUNE, HIDDEN_EXPAND, MEM_EXPAND, MEM_FROZEN, METHODS,
                       MULTITASK, DomainSchedule, RunConfig, ScheduleEntry,
                       ScheduleResult, SourceState, run_schedule, train_source)
from .training import EwcState, TrainResult, compute_fisher, evaluate, train_domain
