#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "raypose/geom.hpp"

namespace raypose::rpf {

using geom::CameraIntrinsics;
using geom::ObjectModel;
using geom::PixelDepth;
using geom::Pose;
using geom::Rotation;
using geom::StereoRig;
using geom::Vec2;
using geom::Vec3;

enum class Distribution { uniform, gaussian, laplace, beta };

Distribution distribution_from_name(const std::string& name);
std::string distribution_name(Distribution d);

struct SamplerConfig {
    int count = 64;          // hypotheses per frame
    double beta = 0.0;       // depth scale, meters (callers default to model diameter)
    Distribution distribution = Distribution::uniform;
    uint64_t seed = 0;
};

struct ScorerConfig {
    double temperature = 5.0;   // softmax contrast, pixels
    double cutoff = 20.0;       // chamfer truncation, pixels
    int max_model_points = 0;   // 0 = use every model point
};

struct RayHypothesis {
    Vec3 center = Vec3::Zero();
    Rotation rotation;
    double depth = 0.0;
    double score = 0.0;
    double error = 0.0;  // chamfer error, filled by score_hypotheses
};

struct HypothesisSet {
    double u = 0.0;  // shared ray pixel (left camera)
    double v = 0.0;
    std::vector<RayHypothesis> items;
    bool scored = false;

    size_t size() const { return items.size(); }
};

// (u, v, d) of the camera ray through c; identical to geom::project.
PixelDepth ray_through(const CameraIntrinsics& k, const Vec3& c);

// count depth samples around d. Index 0 is always exactly d. The uniform
// distribution is sampled one-per-stratum over [d-beta, d+beta] so that any
// target depth in the interval has a sample within 2*beta/count; gaussian /
// laplace / beta(2,2) draw iid. Everything is clamped to >= 1 mm and fully
// determined by cfg.seed.
std::vector<double> sample_depths(double d, const SamplerConfig& cfg);

// One hypothesis per depth, all sharing the pivot rotation, centers
// back-projected through (u, v); scores initialized uniform.
HypothesisSet make_hypotheses(const CameraIntrinsics& k, double u, double v,
                              const std::vector<double>& depths, const Rotation& pivot);

// Scores every hypothesis with a symmetric truncated chamfer distance between
// the model points rendered through both eyes and the observed 2D points
// (current feature positions near the target), then softmax(-err/T).
// Throws InsufficientObservations when either eye has fewer than 3 points.
void score_hypotheses(HypothesisSet& set, const ObjectModel& model,
                      const std::vector<Vec2>& left_obs,
                      const std::vector<Vec2>& right_obs, const StereoRig& rig,
                      const ScorerConfig& cfg = {});

// Argmax score; ties to the smallest depth, then the smallest index. Throws
// NotScored on an unscored set.
const RayHypothesis& select_top1(const HypothesisSet& set);

struct RefineResult {
    Pose pose;
    bool degenerate = false;  // singular normal equations; pose left unchanged
    double error = 0.0;       // mean matched reprojection error, pixels
    int accepted_steps = 0;
};

// Gauss-Newton on the 6-dim tangent (left-multiplied rotation increment +
// center shift). Each observed point is matched to its nearest rendered
// model point within `cutoff`, re-associated every step. Steps that increase
// the error are halved, then rejected; the error over accepted steps is
// non-increasing.
RefineResult refine(const RayHypothesis& best, const ObjectModel& model,
                    const std::vector<Vec2>& left_obs,
                    const std::vector<Vec2>& right_obs, const StereoRig& rig,
                    int iterations = 8, double cutoff = 20.0);

// An image observation bound to a specific model point.
struct Match {
    Vec2 observed = Vec2::Zero();
    int point_index = 0;
};

// Same Gauss-Newton scheme over fixed correspondences: no re-association, the
// error is the plain mean reprojection distance. Callers that carry
// observations across frames keep their model-point bindings and so cannot
// slip to a neighbouring point on a repetitive surface the way
// nearest-neighbour matching can.
RefineResult refine_matched(const Pose& start, const ObjectModel& model,
                            const std::vector<Match>& left,
                            const std::vector<Match>& right, const StereoRig& rig,
                            int iterations = 8);

struct AttentionResult {
    Eigen::MatrixXd output;
    std::vector<Eigen::MatrixXd> attention;  // one row-stochastic matrix per head
};

// Scaled dot-product multi-head attention with the given matrices. Rows of
// each head's attention matrix sum to 1; permuting the rows of keys and
// values together leaves the output unchanged.
AttentionResult mha_core(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                         const Eigen::MatrixXd& values, int heads);

// Structural stand-in for the learned decoder, off the tracking path: fixed
// seeded FFN + sinusoidal positions + mha_core. Verifies shapes and
// normalization only.
AttentionResult attention_shapecheck(const Eigen::MatrixXd& queries,
                                     const Eigen::MatrixXd& observation,
                                     int heads = 4);

}  // namespace raypose::rpf
