import math

from corrmeta.transforms import NormalizedEffect


def eff(z, n=103, study_id="", region_class=None, male_pct=None):
    """Effect with an exact Fisher z (bypassing r) and var 1/(n-3)."""
    var = 1.0 / (n - 3)
    return NormalizedEffect(r=math.tanh(z), z=z, var_z=var, se_z=math.sqrt(var), n=n, study_id=study_id,
                            region_class=region_class, male_pct=male_pct)


def eff_v(z, v, **meta):
    """Effect with an arbitrary sampling variance."""
    return NormalizedEffect(r=math.tanh(z), z=z, var_z=v, se_z=math.sqrt(v), n=int(1 / v) + 3, **meta)
