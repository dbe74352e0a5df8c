"""Off-the-grid sparse inverse problems with certified recovery.

Library layout:

* :mod:`sparse_certify.domain` -- settings, atoms, sparse elements, grids
* :mod:`sparse_certify.kernels` -- smooth convolution kernels
* :mod:`sparse_certify.forward` -- measurement operator and dual pairing
* :mod:`sparse_certify.primal` -- fully-corrective conditional gradient
* :mod:`sparse_certify.dual` -- cutting-plane dual projection, certificates
* :mod:`sparse_certify.certify` -- non-degeneracy margins and verdicts
* :mod:`sparse_certify.recovery` -- noise sweeps and atom matching
* :mod:`sparse_certify.oracle` -- grid-restricted reference solver
* :mod:`sparse_certify.cli` -- command-line front end
"""

from .domain import (
    BV_INDICATOR,
    PAIRED_WASSERSTEIN,
    RADON_TV,
    PairedDirac,
    SampleGrid,
    Setting,
    SignedDirac,
    SignedIndicator,
    SparseElement,
    atom_distance,
    g_value,
)
from .forward import ForwardModel, Observation
from .kernels import PeriodizedGaussian, RaisedCosine, integral
from .primal import SolveOptions, SolveResult, fully_corrective_fit, lmo, solve
from .dual import (
    CertificateEstimate,
    DualResult,
    dual_objective,
    estimate_minimal_norm_certificate,
    feasibility_sup,
    solve_dual_projection,
)
from .certify import MndscReport, check_mndsc, extreme_critical_set, precertificate
from .recovery import (
    MatchReport,
    SweepConfig,
    SweepRecord,
    make_noise,
    match_atoms,
    run_sweep,
)
from .oracle import GridDictionary, solve_grid

__version__ = "0.1.0"
