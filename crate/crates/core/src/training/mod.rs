//! Loss assembly, the optimization loop and evaluation of trained surrogates.

mod adam;
mod evaluate;
mod loss;
mod trainer;

pub use adam::Adam;
pub use evaluate::{
    evaluate, jacobian_metrics, metrics_from_predictions, perturbed_eval, perturbed_parameters, perturbed_samples, predict_samples, solution_rel_l2,
    Metrics,
};
pub use loss::{
    combine, combine_values, loss_eq, loss_eq_parts, loss_s, loss_u, sample_supervision_points, EquationLoss, LossConfig,
    LossTerm, PhysicsContext, Regime, SupervisionPoints,
};
pub use trainer::{batch_loss, train, BatchLoss, EpochRecord, History, TrainConfig, TrainItem, TrainOutcome};
