import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from inrmar.estimators import FBPReconstructor, INRReconstructor, MBHCReconstructor
from inrmar.fbp import fbp
from inrmar.geometry import GridSpec, default_parallel
from inrmar.mbhc import mbhc_reconstruct
from inrmar.phantoms import Disk, PhantomSpec, Primitive
from inrmar.physics import bundled_material, bundled_spectrum
from inrmar.projector import project_poly


@pytest.fixture(scope="module")
def metal_sino():
    grid = GridSpec(48, 48, 1.0)
    geo = default_parallel(grid, 60, 72)
    ph = PhantomSpec((Primitive(Disk((0.0, 0.0), 15.0), bundled_material("water")),
                      Primitive(Disk((4.0, 0.0), 3.0), bundled_material("titanium"))))
    return grid, project_poly(ph, geo, bundled_spectrum())


def test_fbp_estimator_matches_function(metal_sino):
    grid, sino = metal_sino
    est = FBPReconstructor(48, 48, 1.0).fit(sino)
    np.testing.assert_array_equal(est.transform(sino), fbp(sino, grid).values)
    np.testing.assert_array_equal(est.transform(sino.values), fbp(sino, grid).values)
    np.testing.assert_array_equal(FBPReconstructor(48, 48, 1.0).fit_transform(sino), fbp(sino, grid).values)


def test_mbhc_estimator_matches_function(metal_sino):
    grid, sino = metal_sino
    est = MBHCReconstructor(48, 48, 1.0, threshold=0.2, kappa=0.5).fit(sino)
    ref = mbhc_reconstruct(sino, grid, 0.2, 0.5)
    np.testing.assert_array_equal(est.transform(sino), ref.image.values)
    assert est.kappa_ == 0.5 and est.metal_mask_.sum() == ref.mask.n_pixels


def test_params_and_clone():
    est = INRReconstructor(max_steps=7, seed=3)
    assert est.get_params()["max_steps"] == 7
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est
    assert est.set_params(seed=4).seed == 4


def test_not_fitted():
    with pytest.raises(NotFittedError):
        FBPReconstructor().transform(np.zeros((3, 3)))
    with pytest.raises(NotFittedError):
        INRReconstructor().transform(None)


def test_bad_inputs(metal_sino):
    _, sino = metal_sino
    with pytest.raises(TypeError):
        FBPReconstructor().fit(np.zeros((60, 72)))
    with pytest.raises(ValueError):
        FBPReconstructor(nx=0).fit(sino)
    est = FBPReconstructor(48, 48, 1.0).fit(sino)
    with pytest.raises(ValueError):
        est.transform(np.zeros(5))
    with pytest.raises(ValueError):
        MBHCReconstructor(48, 48, 1.0, kappa=-1.0).fit(sino).transform(sino)


def test_inr_estimator_short_fit(metal_sino):
    grid, sino = metal_sino
    est = INRReconstructor(48, 48, 1.0, samples_per_ray=16, rays_per_batch=64, max_steps=5, seed=1)
    est.fit(sino)
    assert est.n_steps_ == 5 and est.loss_history_.shape == (5,)
    assert est.transform(sino).shape == (48, 48)
    assert (est.sigma_image() >= 0).all()
    P = est.predict()
    assert P.shape == sino.values.shape and np.isfinite(P).all()
    mask = np.ones(sino.values.shape, bool)
    mask[:, :10] = False
    assert clone(est).fit(sino, mask=mask).n_steps_ == 5
