//! Raw-pixel classical learners: random forest, linear SVM and logistic regression.

mod forest;
mod linear;
mod tree;

pub use forest::{rf_predict_proba, train_random_forest, ForestConfig, RandomForest};
pub use linear::{
    linear_predict_proba, logistic_objective, svm_objective, train_linear_svm,
    train_logistic_regression, LinearConfig, LinearGrads, LinearKind, LinearModel,
};
pub use tree::{DecisionTree, Node, TreeConfig};
