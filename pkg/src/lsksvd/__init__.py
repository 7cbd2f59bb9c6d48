"""Level-set KSVD texture segmentation.

Two class dictionaries are learned with KSVD from annotated patches of a
single image; other images are then segmented by a narrow-band level set whose
region fidelity is the correlation-weighted dictionary approximation error.
"""

from lsksvd._accel import HAVE_NUMBA
from lsksvd.classify import RocCurve, classify_patch, classify_patches, roc_curve
from lsksvd.errors import (
    CorrelationMatrix,
    approximation_errors,
    correlation_matrix,
    fidelity_fields,
    mahalanobis_diag,
)
from lsksvd.imaging import (
    Dataset,
    build_dataset,
    extract_patch,
    extract_all_patches,
    lab_a_channel,
    read_image,
    read_mask,
    render_overlay,
    write_image,
    write_mask,
)
from lsksvd.levelset import (
    SegParams,
    ConvergenceMonitor,
    cfl_dt,
    convergence_step,
    curvature,
    curvature_field,
    delta,
    evolve,
    evolve_chan_vese,
    force_field,
    heaviside,
    init_phi_checkerboard,
    sussman_reinit,
)
from lsksvd.sparse import (
    Dictionary,
    TrainConfig,
    batch_omp,
    ksvd_train,
    load_dictionary,
    omp,
    save_dictionary,
)

__version__ = "0.1.0"
