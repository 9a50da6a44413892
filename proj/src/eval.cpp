#include "raypose/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "raypose/errors.hpp"

namespace raypose::eval {
namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

Stats stats_of(const std::vector<double>& values) {
    Stats s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / values.size();
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(sq / values.size());
    return s;
}

nlohmann::ordered_json bin_json(const BinMetrics& b) {
    nlohmann::ordered_json j;
    j["frames"] = b.frames;
    j["add_recall_01d"] = b.add_recall;
    j["adds_recall_01d"] = b.adds_recall;
    j["e_p_cm"] = {{"mean", b.e_p_cm.mean}, {"stdev", b.e_p_cm.stdev}};
    j["e_r_deg"] = {{"mean", b.e_r_deg.mean}, {"stdev", b.e_r_deg.stdev}};
    j["switch_count"] = b.switches;
    j["proj5_rate"] = b.proj5;
    return j;
}

void bin_csv(std::string& out, const std::string& name, const BinMetrics& b) {
    auto row = [&](const char* metric, double mean, double stdev, bool has_stdev) {
        out += name;
        out += ',';
        out += metric;
        out += ',';
        out += nlohmann::ordered_json(mean).dump();
        out += ',';
        if (has_stdev) out += nlohmann::ordered_json(stdev).dump();
        out += '\n';
    };
    row("frames", static_cast<double>(b.frames), 0.0, false);
    row("add_recall_01d", b.add_recall, 0.0, false);
    row("adds_recall_01d", b.adds_recall, 0.0, false);
    row("e_p_cm", b.e_p_cm.mean, b.e_p_cm.stdev, true);
    row("e_r_deg", b.e_r_deg.mean, b.e_r_deg.stdev, true);
    row("switch_count", static_cast<double>(b.switches), 0.0, false);
    row("proj5_rate", b.proj5, 0.0, false);
}

}  // namespace

double add(const Pose& pred, const Pose& gt, const ObjectModel& model) {
    if (model.points.empty()) throw EmptyModel("add needs a non-empty model");
    double sum = 0.0;
    for (const geom::Vec3& x : model.points)
        sum += (pred.rotation * x + pred.center - (gt.rotation * x + gt.center)).norm();
    return sum / model.points.size();
}

double add_s(const Pose& pred, const Pose& gt, const ObjectModel& model) {
    if (model.points.empty()) throw EmptyModel("add_s needs a non-empty model");
    if (model.symmetry_group.empty()) return add(pred, gt, model);
    double best = std::numeric_limits<double>::infinity();
    for (const Rotation& g : model.symmetry_group)
        best = std::min(best, add(Pose{pred.rotation * g, pred.center}, gt, model));
    return best;
}

double recall_at(const std::vector<double>& distances, double diameter, double fraction) {
    if (distances.empty()) throw EmptySequence("recall over an empty run");
    if (!(diameter > 0.0)) throw OutOfRange("recall needs a positive diameter");
    const double threshold = fraction * diameter;
    long hits = 0;
    for (double d : distances)
        if (d < threshold) ++hits;
    return static_cast<double>(hits) / distances.size();
}

double reduced_rotation_error(const Rotation& pred, const Rotation& gt,
                              const std::vector<Rotation>& symmetry) {
    if (symmetry.empty()) return geom::geodesic_angle(pred, gt);
    double best = M_PI;
    for (const Rotation& g : symmetry)
        best = std::min(best, geom::geodesic_angle(pred * g, gt));
    return best;
}

long switch_count(const std::vector<Rotation>& preds, const std::vector<Rotation>& gts,
                  const std::vector<Rotation>& symmetry, const SwitchParams& params) {
    if (preds.size() != gts.size())
        throw GeometryMismatch("switch_count needs matching sequence lengths");
    long count = 0;
    bool armed = false;
    for (size_t i = 0; i < preds.size(); ++i) {
        const double err = reduced_rotation_error(preds[i], gts[i], symmetry) * kRadToDeg;
        if (armed && err >= params.enter_deg) {
            ++count;
            armed = false;
        }
        if (err < params.exit_deg) armed = true;
    }
    return count;
}

bool proj_ok(const Pose& pred, const Pose& gt, const CameraIntrinsics& k, double tol_px) {
    if (pred.center.z() <= 0.0 || gt.center.z() <= 0.0) return false;
    const geom::PixelDepth p = geom::project(k, pred.center);
    const geom::PixelDepth g = geom::project(k, gt.center);
    return std::hypot(p.u - g.u, p.v - g.v) <= tol_px;
}

double proj_at(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
               const CameraIntrinsics& k, double tol_px) {
    if (preds.size() != gts.size())
        throw GeometryMismatch("proj_at needs matching sequence lengths");
    if (preds.empty()) throw EmptySequence("proj_at over an empty run");
    long hits = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (proj_ok(preds[i], gts[i], k, tol_px)) ++hits;
    return static_cast<double>(hits) / preds.size();
}

MetricsReport aggregate(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
                        const std::vector<std::string>& bins, const std::vector<uint8_t>& lost,
                        const ObjectModel& model, const CameraIntrinsics& left_eye,
                        const AggregateOptions& options) {
    const size_t n = preds.size();
    if (n == 0) throw EmptySequence("aggregate over an empty run");
    if (gts.size() != n || (!bins.empty() && bins.size() != n) ||
        (!lost.empty() && lost.size() != n))
        throw GeometryMismatch("aggregate needs matching sequence lengths");

    struct FrameRow {
        double add_m, adds_m, e_p_cm, e_r_deg;
        bool proj;
    };
    std::vector<FrameRow> rows(n);
    for (size_t i = 0; i < n; ++i) {
        rows[i].add_m = add(preds[i], gts[i], model);
        rows[i].adds_m = add_s(preds[i], gts[i], model);
        rows[i].e_p_cm = 100.0 * (preds[i].center - gts[i].center).norm();
        rows[i].e_r_deg =
            reduced_rotation_error(preds[i].rotation, gts[i].rotation, model.symmetry_group) *
            kRadToDeg;
        rows[i].proj = proj_ok(preds[i], gts[i], left_eye, options.proj_tol_px);
    }

    // One automaton pass; each switch lands in the bin of its crossing frame.
    std::map<std::string, long> bin_switches;
    long total_switches = 0;
    {
        bool armed = false;
        for (size_t i = 0; i < n; ++i) {
            if (armed && rows[i].e_r_deg >= options.switch_params.enter_deg) {
                ++total_switches;
                if (!bins.empty()) ++bin_switches[bins[i]];
                armed = false;
            }
            if (rows[i].e_r_deg < options.switch_params.exit_deg) armed = true;
        }
    }

    auto metrics_for = [&](const std::vector<size_t>& idx, long switches) {
        BinMetrics b;
        b.frames = static_cast<long>(idx.size());
        if (idx.empty()) return b;
        std::vector<double> adds, addss, eps, ers;
        long proj_hits = 0;
        for (size_t i : idx) {
            adds.push_back(rows[i].add_m);
            addss.push_back(rows[i].adds_m);
            eps.push_back(rows[i].e_p_cm);
            ers.push_back(rows[i].e_r_deg);
            if (rows[i].proj) ++proj_hits;
        }
        b.add_recall = recall_at(adds, model.diameter, options.recall_fraction);
        b.adds_recall = recall_at(addss, model.diameter, options.recall_fraction);
        b.e_p_cm = stats_of(eps);
        b.e_r_deg = stats_of(ers);
        b.switches = switches;
        b.proj5 = static_cast<double>(proj_hits) / idx.size();
        return b;
    };

    MetricsReport report;
    report.frames = static_cast<long>(n);
    for (uint8_t flag : lost) report.lost += flag ? 1 : 0;

    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    report.overall = metrics_for(all, total_switches);

    if (!bins.empty()) {
        for (const char* name : {"Regular", "Medium", "Faster"}) {
            std::vector<size_t> idx;
            for (size_t i = 0; i < n; ++i)
                if (bins[i] == name) idx.push_back(i);
            if (idx.empty()) continue;  // empty bins are absent, not zero
            const auto it = bin_switches.find(name);
            report.bins.emplace_back(name,
                                     metrics_for(idx, it == bin_switches.end() ? 0 : it->second));
        }
    }
    return report;
}

std::string report_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["frames"] = report.frames;
    j["lost"] = report.lost;
    j["overall"] = bin_json(report.overall);
    nlohmann::ordered_json bins = nlohmann::ordered_json::object();
    for (const auto& [name, metrics] : report.bins) bins[name] = bin_json(metrics);
    j["bins"] = bins;
    if (report.has_fps) j["fps"] = report.fps;
    return j.dump(2) + "\n";
}

std::string report_csv(const MetricsReport& report) {
    std::string out = "bin,metric,mean,stdev\n";
    bin_csv(out, "overall", report.overall);
    for (const auto& [name, metrics] : report.bins) bin_csv(out, name, metrics);
    return out;
}

void write_report(const MetricsReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string());
    for (const auto& [name, text] :
         {std::pair<const char*, std::string>{"report.json", report_json(report)},
          {"report.csv", report_csv(report)}}) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw IoError("cannot write " + (dir / name).string());
        out << text;
    }
}

}  // namespace raypose::eval
