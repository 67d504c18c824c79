//! End-to-end experiment pipelines: object mapping from tracked
//! observations, and sequential camera localization against known objects.

use super::{
    integrate_odometry, mapping_report, noisy_odometry, run_tracking, synthesize_observations,
    ExperimentConfig, MappingReport, Scene, SimError,
};
use crate::assoc::SemanticObservation;
use crate::estimator::{
    init_object, optimize_camera_pose, optimize_object_pose, optimize_object_shape, ObjectState,
    OptimTrace,
};
use crate::liegroup::Pose;
use crate::sim::metrics::ate;

/// Result of mapping one tracked object.
#[derive(Debug)]
pub struct MappedObject {
    /// Ground-truth object index behind the track.
    pub gt_object: usize,
    pub track_id: usize,
    /// Mean model at the initialized pose, before optimization.
    pub initial: MappingReport,
    /// After pose and shape optimization.
    pub optimized: MappingReport,
    pub state: ObjectState,
    pub pose_traces: Vec<OptimTrace>,
    pub shape_traces: Vec<OptimTrace>,
}

#[derive(Debug)]
pub struct MappingOutcome {
    pub views: usize,
    pub objects: Vec<MappedObject>,
    /// Tracks whose initialization failed, with the failure text.
    pub failures: Vec<(usize, String)>,
}

impl MappingOutcome {
    /// Best-supported mapped instance of one ground-truth object (tracks can
    /// fragment; the longest track wins).
    pub fn best_for(&self, gt_object: usize) -> Option<&MappedObject> {
        self.objects
            .iter()
            .filter(|o| o.gt_object == gt_object)
            .max_by_key(|o| (o.optimized.per_view_mask_iou.len(), usize::MAX - o.track_id))
    }

    /// Ground-truth object indices that got at least one mapped instance.
    pub fn mapped_gt_objects(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.objects.iter().map(|o| o.gt_object).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn mean_voxel_iou(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .mapped_gt_objects()
            .iter()
            .filter_map(|&g| self.best_for(g).and_then(|o| o.optimized.voxel_iou))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn mean_initial_voxel_iou(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .mapped_gt_objects()
            .iter()
            .filter_map(|&g| self.best_for(g).and_then(|o| o.initial.voxel_iou))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Restricts a scene to `views` frames spread evenly over its trajectory.
pub fn subsample_scene(scene: &Scene, views: usize) -> Scene {
    let total = scene.frame_count();
    let views = views.clamp(1, total);
    let trajectory = (0..views)
        .map(|i| scene.trajectory[i * total / views])
        .collect();
    Scene { trajectory, ..scene.clone() }
}

/// Runs the mapping task: synthesize and track observations over the whole
/// trajectory, initialize each track by triangulating its keypoints over
/// all of its frames, then optimize pose and shape against `views` evenly
/// spread observations of the track. Initialization failures are recorded
/// and the run continues.
pub fn run_mapping(config: &ExperimentConfig, views: usize) -> Result<MappingOutcome, SimError> {
    let scene = config.build_scene()?;
    let noise = config.noise_model();
    let (mean_mesh, mean_assoc) = config.mean_model();
    let cameras: Vec<Pose> = scene.trajectory.iter().map(|(_, p)| *p).collect();

    let tracking = run_tracking(&scene, &noise)?;
    let mut objects = Vec::new();
    let mut failures = Vec::new();
    for track in &tracking.tracks {
        if track.observations.is_empty() {
            continue;
        }
        let gt_object = tracking.track_labels[track.id];
        let mut state = match init_object(
            track,
            &mean_mesh,
            &mean_assoc,
            &cameras,
            &scene.intrinsics,
            &config.optim,
        ) {
            Ok(state) => state,
            Err(e) => {
                failures.push((track.id, e.to_string()));
                continue;
            }
        };
        // The view budget caps how many of the track's observations drive
        // the shape optimization. Large budgets sample the track uniformly;
        // small ones use interior offsets so that two or three views do not
        // degenerate to antipodal pairs of a closed orbit.
        let total = track.observations.len();
        let used = views.clamp(1, total);
        let selected: Vec<&(usize, SemanticObservation)> = if used == total {
            track.observations.iter().collect()
        } else if used >= 4 {
            (0..used).map(|i| &track.observations[i * total / used]).collect()
        } else {
            (1..=used).map(|i| &track.observations[i * total / (used + 1)]).collect()
        };
        let view_poses: Vec<Pose> = selected.iter().map(|(f, _)| cameras[*f]).collect();

        let gt = &scene.objects[gt_object];
        let initial = mapping_report(
            &gt.mesh,
            &gt.pose,
            &state.mesh,
            &state.pose,
            &view_poses,
            &scene.intrinsics,
            scene.width,
            scene.height,
            64,
        )?;

        // Shape is carved at the triangulation-initialized pose first; the
        // gradient pose stage runs between rounds with the carved mesh (and
        // over the whole track), where the category-model mismatch that
        // biases image-space pose refinement has been fitted away. Each
        // round re-carves from a fresh mean-model copy.
        let frames: Vec<(usize, &SemanticObservation)> =
            selected.iter().map(|(f, o)| (*f, o)).collect();
        let all_frames: Vec<(usize, &SemanticObservation)> =
            track.observations.iter().map(|(f, o)| (*f, o)).collect();
        let mut pose_traces = Vec::new();
        let mut shape_traces = Vec::new();
        for round in 0..config.optim.alternations.max(1) {
            if round > 0 {
                pose_traces.push(optimize_object_pose(
                    &mut state,
                    &all_frames,
                    &cameras,
                    &scene.intrinsics,
                    &config.optim,
                )?);
                state.mesh = mean_mesh.clone();
            }
            shape_traces.push(optimize_object_shape(
                &mut state,
                &frames,
                &cameras,
                &scene.intrinsics,
                &config.optim,
            )?);
        }

        let optimized = mapping_report(
            &gt.mesh,
            &gt.pose,
            &state.mesh,
            &state.pose,
            &view_poses,
            &scene.intrinsics,
            scene.width,
            scene.height,
            64,
        )?;
        objects.push(MappedObject {
            gt_object,
            track_id: track.id,
            initial,
            optimized,
            state,
            pose_traces,
            shape_traces,
        });
    }
    Ok(MappingOutcome { views, objects, failures })
}

#[derive(Debug)]
pub struct LocalizationOutcome {
    pub ground_truth: Vec<(f64, Pose)>,
    pub odometry_only: Vec<(f64, Pose)>,
    pub optimized: Vec<(f64, Pose)>,
    pub ate_odometry: f64,
    pub ate_optimized: f64,
    /// ATE of the trajectory formed by each frame's pose after k iterations;
    /// index 0 is the odometry-predicted pose per frame.
    pub ate_per_iteration: Vec<f64>,
    /// Frames that had no visible objects and fell back to odometry.
    pub odometry_only_frames: Vec<usize>,
}

/// Sequential per-frame localization: the camera pose is predicted by the
/// (noisy, biased) odometry measurement and refined against the known
/// ground-truth objects, frame by frame.
pub fn run_localization(config: &ExperimentConfig) -> Result<LocalizationOutcome, SimError> {
    let scene = config.build_scene()?;
    let noise = config.noise_model();
    let relatives = noisy_odometry(&scene.trajectory, &noise);
    let objects: Vec<ObjectState> = scene
        .objects
        .iter()
        .map(|o| ObjectState {
            pose: o.pose,
            mesh: o.mesh.clone(),
            assoc: o.assoc.clone(),
            class: o.class,
        })
        .collect();

    let start = scene.trajectory[0].1;
    let mut optimized: Vec<(f64, Pose)> = vec![(scene.trajectory[0].0, start)];
    let mut per_frame_traces: Vec<Vec<Pose>> = vec![vec![start]];
    let mut odometry_only_frames = Vec::new();

    for frame in 1..scene.frame_count() {
        let labeled = synthesize_observations(&scene, frame, &noise)?;
        let refs: Vec<(usize, &SemanticObservation)> =
            labeled.iter().map(|l| (l.object, &l.obs)).collect();
        let previous = optimized.last().unwrap().1;
        let result = optimize_camera_pose(
            &previous,
            &relatives[frame - 1],
            &objects,
            &refs,
            &scene.intrinsics,
            &config.optim,
        )?;
        if result.odometry_only {
            odometry_only_frames.push(frame);
        }
        optimized.push((scene.trajectory[frame].0, result.pose));
        per_frame_traces.push(result.pose_trace);
    }

    let odometry_only: Vec<(f64, Pose)> = scene
        .trajectory
        .iter()
        .map(|(t, _)| *t)
        .zip(integrate_odometry(&start, &relatives))
        .collect();

    let ate_odometry = ate(&odometry_only, &scene.trajectory, false)?;
    let ate_optimized = ate(&optimized, &scene.trajectory, false)?;

    let max_iters = per_frame_traces.iter().map(Vec::len).max().unwrap_or(1);
    let mut ate_per_iteration = Vec::with_capacity(max_iters);
    for k in 0..max_iters {
        let snapshot: Vec<(f64, Pose)> = scene
            .trajectory
            .iter()
            .enumerate()
            .map(|(i, (t, _))| {
                let trace = &per_frame_traces[i];
                (*t, trace[k.min(trace.len() - 1)])
            })
            .collect();
        ate_per_iteration.push(ate(&snapshot, &scene.trajectory, false)?);
    }

    Ok(LocalizationOutcome {
        ground_truth: scene.trajectory.clone(),
        odometry_only,
        optimized,
        ate_odometry,
        ate_optimized,
        ate_per_iteration,
        odometry_only_frames,
    })
}
