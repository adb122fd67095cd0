//! Python bindings: rigid fitting, pose metrics, mean-shift voting, dataset
//! generation and the gradient-check suite.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use keypose::clustering::{mean_shift_mode, Kernel, MeanShiftConfig};
use keypose::data::{generate_dataset, write_dataset, GeneratorConfig};
use keypose::geometry::{farthest_point_sampling, Mat3};
use keypose::pipeline::gradcheck_suite;
use keypose::posefit::{add_metric, adds_metric, fit_rigid};
use keypose::{Pose, Vec3};

type Matrix = [[f64; 3]; 3];

fn py_err(e: keypose::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn points(v: &[[f64; 3]]) -> Vec<Vec3> {
    v.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()
}

fn pose(rotation: Matrix, translation: [f64; 3]) -> PyResult<Pose> {
    let r = Mat3::from_fn(|i, j| rotation[i][j]);
    Pose::new(r, Vec3::from(translation)).map_err(py_err)
}

/// Least-squares proper rigid transform mapping `src` onto `dst`.
/// Returns `(rotation, translation, residual)`.
#[pyfunction]
fn fit_pose(src: Vec<[f64; 3]>, dst: Vec<[f64; 3]>) -> PyResult<(Matrix, [f64; 3], f64)> {
    let fit = fit_rigid(&points(&src), &points(&dst)).map_err(py_err)?;
    let r = fit.pose.rotation();
    let rot = std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]));
    let t = fit.pose.translation();
    Ok((rot, [t.x, t.y, t.z], fit.residual))
}

/// `(ADD, ADD-S)` of a predicted pose against the ground truth.
#[pyfunction]
fn pose_errors(
    pred_rotation: Matrix,
    pred_translation: [f64; 3],
    gt_rotation: Matrix,
    gt_translation: [f64; 3],
    vertices: Vec<[f64; 3]>,
) -> PyResult<(f64, f64)> {
    let pred = pose(pred_rotation, pred_translation)?;
    let gt = pose(gt_rotation, gt_translation)?;
    let v = points(&vertices);
    Ok((
        add_metric(&pred, &gt, &v).map_err(py_err)?,
        adds_metric(&pred, &gt, &v).map_err(py_err)?,
    ))
}

/// Indices chosen by greedy farthest point sampling from `start`.
#[pyfunction]
#[pyo3(signature = (pts, n, start = 0))]
fn fps(pts: Vec<[f64; 3]>, n: usize, start: usize) -> PyResult<Vec<usize>> {
    farthest_point_sampling(&points(&pts), n, start).map_err(py_err)
}

/// Flat-kernel mean-shift mode of the candidates and its support.
#[pyfunction]
fn vote(candidates: Vec<[f64; 3]>, bandwidth: f64) -> PyResult<([f64; 3], usize)> {
    let cfg = MeanShiftConfig {
        bandwidth,
        max_iters: 100,
        tol: 1e-4 * bandwidth,
        kernel: Kernel::Flat,
    };
    let m = mean_shift_mode(&points(&candidates), &cfg).map_err(py_err)?;
    Ok(([m.point.x, m.point.y, m.point.z], m.support))
}

/// Generates the default dataset into `out`; returns `(objects, scenes)`.
#[pyfunction]
#[pyo3(signature = (out, seed = 0, scenes_per_object = None))]
fn gen_data(out: PathBuf, seed: u64, scenes_per_object: Option<usize>) -> PyResult<(usize, usize)> {
    let mut config = GeneratorConfig::default();
    if let Some(n) = scenes_per_object {
        config.scenes_per_object = n;
    }
    let dataset = generate_dataset(&config, seed).map_err(py_err)?;
    write_dataset(&dataset, &out).map_err(py_err)?;
    Ok((dataset.objects.len(), dataset.scenes.len()))
}

/// `(component, config, max relative error)` for every gradient check.
#[pyfunction]
#[pyo3(signature = (configs = 2))]
fn gradcheck(configs: usize) -> PyResult<Vec<(String, usize, f64)>> {
    Ok(gradcheck_suite(configs)
        .map_err(py_err)?
        .into_iter()
        .map(|e| (e.component, e.config, e.max_rel_error))
        .collect())
}

#[pymodule]
fn keypose_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fit_pose, m)?)?;
    m.add_function(wrap_pyfunction!(pose_errors, m)?)?;
    m.add_function(wrap_pyfunction!(fps, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
