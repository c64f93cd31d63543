"""Wasserstein-ball certificates and distributionally robust training for domain generalisation."""
from .errors import (CertDGError, DegenerateHead, InfeasibleTransport, InvalidArgument, ParseError,
                     TrainingDiverged, UnboundedSurrogate, UnsupportedLoss)
from .netcore import ModelParams, Layer, LossFamily, init_params, forward_rep, loss, grad_loss_z
from .transport import EmpiricalDistribution, TransportPlan, exact_ot, sinkhorn, w2_class_conditional
from .adversarial import AdvDistribution, NormalizedRadius, closest_misclassified, gen_adv_distribution, rho_adv
from .certify import CertConfig, Certificate, cert_dg, cert_01, cert_sweep
from .domains import Domain, DomainDataset, make_rotated_task, apply_corruption
from .dgtrain import DGMethod, DRDGConfig, vanilla_train, dr_dg_train

__version__ = "0.1.0"
