#include "raypose/rpf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "raypose/rng.hpp"

namespace raypose::rpf {

Distribution distribution_from_name(const std::string& name) {
    if (name == "uniform") return Distribution::uniform;
    if (name == "gaussian") return Distribution::gaussian;
    if (name == "laplace") return Distribution::laplace;
    if (name == "beta") return Distribution::beta;
    throw ConfigError("unknown sampling distribution: " + name);
}

std::string distribution_name(Distribution d) {
    switch (d) {
        case Distribution::uniform: return "uniform";
        case Distribution::gaussian: return "gaussian";
        case Distribution::laplace: return "laplace";
        case Distribution::beta: return "beta";
    }
    throw ConfigError("bad distribution enum");
}

PixelDepth ray_through(const CameraIntrinsics& k, const Vec3& c) {
    return geom::project(k, c);
}

std::vector<double> sample_depths(double d, const SamplerConfig& cfg) {
    if (!(d > 0.0)) {
        throw DegenerateDepth("sample_depths: non-positive anchor depth");
    }
    if (cfg.count < 1 || !(cfg.beta > 0.0)) {
        throw ConfigError("sample_depths: need count >= 1 and beta > 0");
    }
    constexpr double kMinDepth = 1e-3;
    const int n = cfg.count;
    std::vector<double> out;
    out.reserve(n);
    out.push_back(d);  // unperturbed anchor
    std::mt19937_64 g(cfg.seed);

    if (cfg.distribution == Distribution::uniform) {
        // One sample per stratum of [d-beta, d+beta]; the anchor stands in for
        // the stratum containing d, so every stratum stays covered and the
        // nearest sample to any depth in the interval is at most 2*beta/n away.
        const double w = 2.0 * cfg.beta / n;
        const int anchor_stratum = n / 2;
        for (int j = 0; j < n; ++j) {
            const double s = d - cfg.beta + (j + rng::uniform_unit(g)) * w;
            if (j == anchor_stratum) continue;  // covered by the anchor
            out.push_back(std::max(s, kMinDepth));
        }
        return out;
    }

    for (int j = 1; j < n; ++j) {
        double x = 0.0;
        switch (cfg.distribution) {
            case Distribution::gaussian: x = rng::gaussian(g); break;
            case Distribution::laplace: x = rng::laplace(g); break;
            case Distribution::beta: x = 2.0 * rng::beta22(g) - 1.0; break;
            case Distribution::uniform: break;  // handled above
        }
        out.push_back(std::max(d + cfg.beta * x, kMinDepth));
    }
    return out;
}

HypothesisSet make_hypotheses(const CameraIntrinsics& k, double u, double v,
                              const std::vector<double>& depths, const Rotation& pivot) {
    if (depths.empty()) {
        throw InsufficientPoints("make_hypotheses: no depths");
    }
    HypothesisSet set;
    set.u = u;
    set.v = v;
    set.items.reserve(depths.size());
    const double uniform = 1.0 / static_cast<double>(depths.size());
    for (double d : depths) {
        RayHypothesis h;
        h.depth = d;
        h.center = geom::back_project(k, u, v, d);
        h.rotation = pivot;
        h.score = uniform;
        set.items.push_back(h);
    }
    return set;
}

namespace {

// Projects model points through one eye; points behind the camera project to
// "nowhere" (valid = false) and contribute the truncation cutoff.
struct RenderedEye {
    std::vector<Vec2> points;
    std::vector<uint8_t> valid;
};

RenderedEye render_points(const std::vector<Vec3>& model_points, const Pose& pose,
                          const CameraIntrinsics& k, const Vec3& eye_offset) {
    RenderedEye out;
    out.points.resize(model_points.size());
    out.valid.resize(model_points.size());
    for (size_t i = 0; i < model_points.size(); ++i) {
        const Vec3 x = pose.rotation * model_points[i] + pose.center - eye_offset;
        if (x.z() > 1e-9) {
            out.points[i] = Vec2(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
            out.valid[i] = 1;
        } else {
            out.valid[i] = 0;
        }
    }
    return out;
}

double truncated_nn(const Vec2& p, const std::vector<Vec2>& cloud, double cutoff) {
    double best2 = cutoff * cutoff;
    for (const Vec2& q : cloud) {
        const double d2 = (p - q).squaredNorm();
        if (d2 < best2) best2 = d2;
    }
    return std::sqrt(best2);
}

double chamfer_eye(const RenderedEye& rendered, const std::vector<Vec2>& obs,
                   double cutoff) {
    double ren_sum = 0.0;
    std::vector<Vec2> visible;
    visible.reserve(rendered.points.size());
    for (size_t i = 0; i < rendered.points.size(); ++i) {
        if (!rendered.valid[i]) {
            ren_sum += cutoff;
            continue;
        }
        visible.push_back(rendered.points[i]);
        ren_sum += truncated_nn(rendered.points[i], obs, cutoff);
    }
    double obs_sum = 0.0;
    for (const Vec2& p : obs) {
        obs_sum += visible.empty() ? cutoff : truncated_nn(p, visible, cutoff);
    }
    return 0.5 * (ren_sum / rendered.points.size() + obs_sum / obs.size());
}

std::vector<Vec3> scoring_points(const ObjectModel& model, int max_points) {
    if (max_points <= 0 || static_cast<int>(model.points.size()) <= max_points) {
        return model.points;
    }
    std::vector<Vec3> out;
    out.reserve(max_points);
    const double stride = static_cast<double>(model.points.size()) / max_points;
    for (int i = 0; i < max_points; ++i) {
        out.push_back(model.points[static_cast<size_t>(i * stride)]);
    }
    return out;
}

}  // namespace

void score_hypotheses(HypothesisSet& set, const ObjectModel& model,
                      const std::vector<Vec2>& left_obs,
                      const std::vector<Vec2>& right_obs, const StereoRig& rig,
                      const ScorerConfig& cfg) {
    if (set.items.empty()) {
        throw InsufficientPoints("score_hypotheses: empty hypothesis set");
    }
    if (left_obs.size() < 3 || right_obs.size() < 3) {
        throw InsufficientObservations("score_hypotheses: need >= 3 observed points per eye");
    }
    if (model.points.empty()) {
        throw EmptyModel("score_hypotheses: model has no points");
    }
    const std::vector<Vec3> pts = scoring_points(model, cfg.max_model_points);
    const Vec3 right_offset(rig.baseline, 0.0, 0.0);

    for (RayHypothesis& h : set.items) {
        const Pose pose{h.rotation, h.center};
        const RenderedEye left = render_points(pts, pose, rig.left, Vec3::Zero());
        const RenderedEye right = render_points(pts, pose, rig.right, right_offset);
        const double err_l = chamfer_eye(left, left_obs, cfg.cutoff);
        const double err_r = chamfer_eye(right, right_obs, cfg.cutoff);
        h.error = 0.5 * (err_l + err_r);
    }

    double min_err = std::numeric_limits<double>::infinity();
    for (const RayHypothesis& h : set.items) min_err = std::min(min_err, h.error);
    double total = 0.0;
    for (RayHypothesis& h : set.items) {
        h.score = std::exp(-(h.error - min_err) / cfg.temperature);
        total += h.score;
    }
    for (RayHypothesis& h : set.items) h.score /= total;
    set.scored = true;
}

const RayHypothesis& select_top1(const HypothesisSet& set) {
    if (!set.scored) {
        throw NotScored("select_top1: hypotheses were never scored");
    }
    size_t best = 0;
    for (size_t i = 1; i < set.items.size(); ++i) {
        const RayHypothesis& a = set.items[i];
        const RayHypothesis& b = set.items[best];
        if (a.score > b.score || (a.score == b.score && a.depth < b.depth)) {
            best = i;
        }
    }
    return set.items[best];
}

namespace {

struct Correspondence {
    Vec3 model_point;
    Vec2 observed;
    int eye;  // 0 = left, 1 = right
};

// Matches every observed point to its nearest rendered model point (within
// cutoff). The observed cloud is the small side, so this direction keeps the
// normal equations bounded by the observation count.
void match_eye(const std::vector<Vec3>& model_points, const Pose& pose,
               const CameraIntrinsics& k, const Vec3& offset, int eye,
               const std::vector<Vec2>& obs, double cutoff,
               std::vector<Correspondence>& out) {
    const RenderedEye rendered = render_points(model_points, pose, k, offset);
    for (const Vec2& p : obs) {
        double best2 = cutoff * cutoff;
        int best = -1;
        for (size_t i = 0; i < rendered.points.size(); ++i) {
            if (!rendered.valid[i]) continue;
            const double d2 = (p - rendered.points[i]).squaredNorm();
            if (d2 < best2) {
                best2 = d2;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            out.push_back({model_points[best], p, eye});
        }
    }
}

// Truncated objective over ALL observations: unmatched ones pay the cutoff.
// Averaging over matched pairs only would reward poses that shed
// correspondences, letting the solver cherry-pick an easy subset.
double matched_error(const std::vector<Vec3>& model_points, const Pose& pose,
                     const StereoRig& rig, const std::vector<Vec2>& left_obs,
                     const std::vector<Vec2>& right_obs, double cutoff,
                     std::vector<Correspondence>* corrs) {
    std::vector<Correspondence> local;
    std::vector<Correspondence>& c = corrs ? *corrs : local;
    c.clear();
    match_eye(model_points, pose, rig.left, Vec3::Zero(), 0, left_obs, cutoff, c);
    match_eye(model_points, pose, rig.right, Vec3(rig.baseline, 0, 0), 1, right_obs,
              cutoff, c);
    const size_t total = left_obs.size() + right_obs.size();
    if (total == 0) return std::numeric_limits<double>::infinity();
    double sum = cutoff * static_cast<double>(total - c.size());
    for (const Correspondence& m : c) {
        const Vec3 x = pose.rotation * m.model_point + pose.center -
                       (m.eye == 1 ? Vec3(rig.baseline, 0, 0) : Vec3::Zero());
        const CameraIntrinsics& k = m.eye == 1 ? rig.right : rig.left;
        const Vec2 p(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
        sum += std::min((p - m.observed).norm(), cutoff);
    }
    return sum / static_cast<double>(total);
}

Rotation exp_rotation(const Vec3& w) {
    const double angle = w.norm();
    if (angle < 1e-14) return Rotation();
    return Rotation::axis_angle(w / angle, angle);
}

// Accumulates the 6x6 normal equations at `pose` and solves for the tangent
// step; false when the spectrum is degenerate (collinear or too few points).
bool solve_step(const std::vector<Correspondence>& corrs, const Pose& pose,
                const StereoRig& rig, Eigen::Matrix<double, 6, 1>& delta) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
    for (const Correspondence& m : corrs) {
        const Vec3 offset = m.eye == 1 ? Vec3(rig.baseline, 0, 0) : Vec3::Zero();
        const CameraIntrinsics& k = m.eye == 1 ? rig.right : rig.left;
        const Vec3 rx = pose.rotation * m.model_point;
        const Vec3 x = rx + pose.center - offset;
        if (x.z() <= 1e-9) continue;
        const double iz = 1.0 / x.z();
        Eigen::Matrix<double, 2, 3> jp;
        jp << k.fx * iz, 0.0, -k.fx * x.x() * iz * iz,
              0.0, k.fy * iz, -k.fy * x.y() * iz * iz;
        Eigen::Matrix3d skew;
        skew << 0, -rx.z(), rx.y(),
                rx.z(), 0, -rx.x(),
                -rx.y(), rx.x(), 0;
        Eigen::Matrix<double, 2, 6> j;
        j.block<2, 3>(0, 0) = -jp * skew;  // d/d(rotation tangent)
        j.block<2, 3>(0, 3) = jp;          // d/d(center)
        const Vec2 p(k.fx * x.x() * iz + k.cx, k.fy * x.y() * iz + k.cy);
        const Vec2 r = p - m.observed;
        H += j.transpose() * j;
        rhs += j.transpose() * r;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(H);
    const double max_eig = eig.eigenvalues().maxCoeff();
    if (!(max_eig > 0.0) || eig.eigenvalues().minCoeff() < 1e-10 * max_eig) {
        return false;
    }
    delta = -H.ldlt().solve(rhs);
    return true;
}

double mean_residual(const std::vector<Correspondence>& corrs, const Pose& pose,
                     const StereoRig& rig) {
    if (corrs.empty()) return std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const Correspondence& m : corrs) {
        const Vec3 x = pose.rotation * m.model_point + pose.center -
                       (m.eye == 1 ? Vec3(rig.baseline, 0, 0) : Vec3::Zero());
        const CameraIntrinsics& k = m.eye == 1 ? rig.right : rig.left;
        const Vec2 p(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
        sum += (p - m.observed).norm();
    }
    return sum / static_cast<double>(corrs.size());
}

}  // namespace

RefineResult refine(const RayHypothesis& best, const ObjectModel& model,
                    const std::vector<Vec2>& left_obs,
                    const std::vector<Vec2>& right_obs, const StereoRig& rig,
                    int iterations, double cutoff) {
    RefineResult result;
    result.pose = Pose{best.rotation, best.center};
    if (model.points.empty()) {
        throw EmptyModel("refine: model has no points");
    }

    std::vector<Correspondence> corrs;
    double error = matched_error(model.points, result.pose, rig, left_obs, right_obs,
                                 cutoff, &corrs);
    result.error = std::isfinite(error) ? error : 0.0;
    if (!std::isfinite(error)) {
        result.degenerate = true;  // nothing matched at all
        return result;
    }

    for (int it = 0; it < iterations; ++it) {
        Eigen::Matrix<double, 6, 1> delta;
        if (!solve_step(corrs, result.pose, rig, delta)) {
            result.degenerate = true;
            return result;  // singular normal equations: pose left as-is
        }
        bool accepted = false;
        for (int half = 0; half < 5; ++half) {
            Pose candidate;
            candidate.rotation =
                exp_rotation(delta.head<3>()) * result.pose.rotation;
            candidate.center = result.pose.center + delta.tail<3>();
            std::vector<Correspondence> cand_corrs;
            const double cand_error = matched_error(model.points, candidate, rig,
                                                    left_obs, right_obs, cutoff,
                                                    &cand_corrs);
            if (cand_error <= error) {
                result.pose = candidate;
                error = cand_error;
                corrs.swap(cand_corrs);
                accepted = true;
                ++result.accepted_steps;
                break;
            }
            delta *= 0.5;
        }
        if (!accepted || delta.norm() < 1e-12) break;
    }

    // Re-orthonormalize after the chain of increments.
    Eigen::Quaterniond q(result.pose.rotation.matrix());
    result.pose.rotation = Rotation::from_matrix(q.normalized().toRotationMatrix());
    result.error = error;
    return result;
}

RefineResult refine_matched(const Pose& start, const ObjectModel& model,
                            const std::vector<Match>& left,
                            const std::vector<Match>& right, const StereoRig& rig,
                            int iterations) {
    RefineResult result;
    result.pose = start;
    if (model.points.empty()) {
        throw EmptyModel("refine_matched: model has no points");
    }
    std::vector<Correspondence> corrs;
    corrs.reserve(left.size() + right.size());
    const int n = static_cast<int>(model.points.size());
    for (int eye = 0; eye < 2; ++eye) {
        for (const Match& m : eye == 0 ? left : right) {
            if (m.point_index < 0 || m.point_index >= n) {
                throw GeometryMismatch("refine_matched: point index out of range");
            }
            corrs.push_back({model.points[static_cast<size_t>(m.point_index)],
                             m.observed, eye});
        }
    }
    if (corrs.size() < 3) {
        result.degenerate = true;
        return result;
    }

    double error = mean_residual(corrs, result.pose, rig);
    for (int it = 0; it < iterations; ++it) {
        Eigen::Matrix<double, 6, 1> delta;
        if (!solve_step(corrs, result.pose, rig, delta)) {
            result.degenerate = true;
            return result;
        }
        bool accepted = false;
        for (int half = 0; half < 5; ++half) {
            Pose candidate;
            candidate.rotation = exp_rotation(delta.head<3>()) * result.pose.rotation;
            candidate.center = result.pose.center + delta.tail<3>();
            const double cand_error = mean_residual(corrs, candidate, rig);
            if (cand_error <= error) {
                result.pose = candidate;
                error = cand_error;
                accepted = true;
                ++result.accepted_steps;
                break;
            }
            delta *= 0.5;
        }
        if (!accepted || delta.norm() < 1e-12) break;
    }

    Eigen::Quaterniond q(result.pose.rotation.matrix());
    result.pose.rotation = Rotation::from_matrix(q.normalized().toRotationMatrix());
    result.error = error;
    return result;
}

AttentionResult mha_core(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                         const Eigen::MatrixXd& values, int heads) {
    const Eigen::Index d = queries.cols();
    if (keys.cols() != d || values.cols() != d || keys.rows() != values.rows()) {
        throw GeometryMismatch("mha_core: query/key/value shapes disagree");
    }
    if (heads < 1 || d % heads != 0) {
        throw GeometryMismatch("mha_core: feature dim not divisible by head count");
    }
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    AttentionResult out;
    out.output.setZero(queries.rows(), d);
    out.attention.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        const auto q = queries.middleCols(h * dh, dh);
        const auto k = keys.middleCols(h * dh, dh);
        const auto v = values.middleCols(h * dh, dh);
        Eigen::MatrixXd logits = scale * (q * k.transpose());
        Eigen::MatrixXd attn(logits.rows(), logits.cols());
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const double m = logits.row(r).maxCoeff();
            attn.row(r) = (logits.row(r).array() - m).exp();
            attn.row(r) /= attn.row(r).sum();
        }
        out.output.middleCols(h * dh, dh) = attn * v;
        out.attention.push_back(std::move(attn));
    }
    return out;
}

namespace {

Eigen::MatrixXd fixed_matrix(std::mt19937_64& g, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = scale * (2.0 * rng::uniform_unit(g) - 1.0);
        }
    }
    return m;
}

Eigen::MatrixXd fixed_ffn(const Eigen::MatrixXd& x) {
    std::mt19937_64 g(42);
    const Eigen::MatrixXd w1 = fixed_matrix(g, x.cols(), x.cols());
    const Eigen::MatrixXd w2 = fixed_matrix(g, x.cols(), x.cols());
    Eigen::MatrixXd hidden = (x * w1).cwiseMax(0.0);  // ReLU
    return hidden * w2;
}

Eigen::MatrixXd with_positions(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out = x;
    const Eigen::Index d = x.cols();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            const double rate = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(d));
            out(i, j) += (j % 2 == 0) ? std::sin(i * rate) : std::cos(i * rate);
        }
    }
    return out;
}

}  // namespace

AttentionResult attention_shapecheck(const Eigen::MatrixXd& queries,
                                     const Eigen::MatrixXd& observation,
                                     int heads) {
    if (queries.cols() != observation.cols()) {
        throw GeometryMismatch("attention_shapecheck: feature dims disagree");
    }
    const Eigen::MatrixXd f = fixed_ffn(observation);
    return mha_core(with_positions(queries), with_positions(f), f, heads);
}

}  // namespace raypose::rpf
