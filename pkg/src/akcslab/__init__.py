"""Kronecker and asymmetric-Kronecker compressive sensing laboratory.

Modules:

* linalg    - dense primitives, seeded Gaussian matrices, 2-D DCT.
* operators - KCS/AKCS forward, adjoint, materialization, serialization.
* coherence - Gram identities, closed-form coherences, Monte Carlo study.
* recon     - ISTA / proximal-gradient reconstruction with pluggable denoisers.
* blocks    - forward passes of the attention-based denoiser components.
* metrics   - PSNR and SSIM.
* pgm       - binary PGM I/O.
* cli       - the `akcslab` command-line surface.
"""

from .coherence import (
    CoherenceReport,
    StudyConfig,
    akcs_coherence,
    akcs_gram_entry,
    akcs_gram_matrix,
    coherence_study,
    gaussian_coherence_estimate,
    gram,
    kcs_coherence_exact,
    kron_gram_identity_check,
    mutual_coherence,
    theorem1_bound,
)
from .linalg import (
    dct2,
    gaussian_matrix,
    idct2,
    kron,
    make_rng,
    matmul,
    normalize_columns,
    transpose,
    vec_cm,
)
from .metrics import psnr, ssim
from .operators import (
    AkcsOperator,
    KcsOperator,
    Measurement,
    akcs_adjoint,
    akcs_forward,
    akcs_from_kcs,
    flatten_akcs,
    gaussian_akcs,
    gaussian_kcs,
    kcs_adjoint,
    kcs_forward,
    materialize_akcs,
    materialize_kcs,
    sampling_plan,
)
from .recon import (
    ReconConfig,
    ReconTrace,
    gradient_step,
    ista_reconstruct,
    lipschitz_estimate,
    prox_dct_l1,
    soft_threshold,
    unfolded_stage,
)

__version__ = "0.1.0"
