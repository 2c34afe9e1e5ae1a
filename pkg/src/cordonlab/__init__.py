"""Desk-scale laboratory for constraint-regularized learned cardinality estimation."""

__version__ = "0.1.0"

from .constraints import (
    ConstraintApplication,
    ConstraintKind,
    LossTerm,
    applicable,
    applicable_constraints,
    augment_consistency,
    augment_pkfk_equality,
    augment_pkfk_inequality,
    loss_term_value,
    pseudo_label,
)
from .dataset import Dataset, generate_dataset, load_dataset, save_dataset
from .evalkit import DksRanking, EvalReport, evaluate, find_dks, violation_probes, violation_ratio
from .metrics import qerror
from .mscn import Featurizer, MscnModel, load_model, mscn_estimator, predict, save_model
from .oracle import counting_estimator, execute_count, sample_bitmaps
from .queries import LabeledQuery, Predicate, Query, SplitSpec, query, read_workload, write_workload
from .schema import ColumnDef, Edge, SchemaDef, TableDef, lab_schema, load_schema, save_schema
from .trainer import TrainConfig, TrainLog, subsample_labels, train
from .workload import (
    add_pk_table,
    drop_pk_table,
    enumerate_subqueries,
    generate_workload,
    split_query,
    subquery_closure,
)
