#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "raypose/errors.hpp"
#include "raypose/io.hpp"
#include "raypose/pipeline.hpp"
#include "raypose/sim.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitEvalMismatch = 3;
constexpr int kExitInvariant = 4;

struct CommonFlags {
    std::string config;
    std::string dataset;
    std::string out;
    long seed = -1;  // -1 keeps the config/default value
    std::string modality;
    bool dump_debug = false;
};

void add_track_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config, "flat section.key = value config file");
    cmd->add_option("--dataset", flags.dataset, "dataset directory")->required();
    cmd->add_option("--seed", flags.seed, "run seed (overrides config)");
    cmd->add_option("--modality", flags.modality, "rgb | event | mixed")
        ->check(CLI::IsMember({"rgb", "event", "mixed"}));
    cmd->add_flag("--dump-debug", flags.dump_debug, "write per-frame cluster/hypothesis CSVs");
}

raypose::pipeline::RunConfig make_run_config(const CommonFlags& flags) {
    raypose::pipeline::RunConfig cfg = raypose::pipeline::load_run_config(flags.config);
    cfg.dataset = flags.dataset;
    cfg.out = flags.out;
    if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
    if (flags.modality == "rgb" || flags.modality == "event") {
        cfg.left_modality = flags.modality;
        cfg.right_modality = flags.modality;
    } else if (flags.modality == "mixed") {
        cfg.left_modality = "rgb";
        cfg.right_modality = "event";
    }
    if (flags.dump_debug) cfg.dump_debug = true;
    return cfg;
}

int cmd_generate(const CommonFlags& flags, const std::string& scene, double duration,
                 double frame_rate) {
    raypose::sim::SceneConfig cfg = raypose::pipeline::load_scene_config(flags.config);
    if (!scene.empty()) cfg.kind = raypose::sim::scene_from_name(scene);
    if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
    if (duration > 0.0) cfg.duration = duration;
    if (frame_rate > 0.0) cfg.frame_rate = frame_rate;
    raypose::sim::generate_dataset(cfg, flags.out);
    std::printf("generated %ld frames (scene %s) in %s\n", cfg.frame_count(),
                raypose::sim::scene_name(cfg.kind).c_str(), flags.out.c_str());
    return kExitOk;
}

int cmd_track(const CommonFlags& flags) {
    const raypose::pipeline::RunConfig cfg = make_run_config(flags);
    const raypose::pipeline::TrackResult result = raypose::pipeline::run_track(cfg);
    std::printf("tracked %ld frames (%ld lost) in %.2fs (%.1f FPS)\n", result.frames,
                result.lost, result.wall_seconds, result.fps());
    return kExitOk;
}

int cmd_eval(const std::string& dataset, const std::string& trace, const std::string& out) {
    raypose::eval::MetricsReport report;
    try {
        report = raypose::pipeline::run_eval(dataset, trace, out);
    } catch (const raypose::GeometryMismatch& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitEvalMismatch;
    }
    const std::string violation = raypose::pipeline::report_invariant_violation(report);
    if (!violation.empty()) {
        std::fprintf(stderr, "report invariant violated: %s\n", violation.c_str());
        return kExitInvariant;
    }
    std::printf("evaluated %ld frames: ADD recall %.3f, ADD-S recall %.3f -> %s\n",
                report.frames, report.overall.add_recall, report.overall.adds_recall,
                out.c_str());
    return kExitOk;
}

int cmd_ablate(const CommonFlags& flags, const std::string& axis) {
    const raypose::pipeline::RunConfig base = make_run_config(flags);
    const std::filesystem::path csv = raypose::pipeline::run_ablate(base, axis, flags.out);
    std::printf("ablation table: %s\n", csv.string().c_str());
    return kExitOk;
}

int cmd_bench(const CommonFlags& flags, double target_fps) {
    raypose::pipeline::RunConfig cfg = make_run_config(flags);
    if (cfg.out.empty()) cfg.out = std::filesystem::path(flags.dataset) / "bench_out";
    const raypose::pipeline::TrackResult result = raypose::pipeline::run_track(cfg);

    std::printf("frames: %ld, lost: %ld, wall: %.3fs, fps: %.2f (target %.1f)\n",
                result.frames, result.lost, result.wall_seconds, result.fps(), target_fps);
    std::string dominant = "";
    double dominant_ms = -1.0;
    for (const auto& [stage, total] : result.stage_ms) {
        std::printf("  %-12s %10.2f ms\n", stage.c_str(), total);
        if (stage == "read" || stage == "write") continue;
        if (total > dominant_ms) {
            dominant_ms = total;
            dominant = stage;
        }
    }
    std::printf("dominant compute stage: %s\n", dominant.c_str());
    if (result.fps() < target_fps) {
        std::fprintf(stderr, "bench failed: %.2f FPS below target %.1f\n", result.fps(),
                     target_fps);
        return kExitInvariant;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"raypose: stereo multi-modal 6DoF tracking pipeline"};
    app.require_subcommand(1);

    CommonFlags generate_flags, track_flags, ablate_flags, bench_flags;
    std::string generate_scene;
    double generate_duration = 0.0, generate_frame_rate = 0.0;
    std::string eval_dataset, eval_trace, eval_out;
    std::string ablate_axis;
    double bench_target = 45.0;

    CLI::App* generate = app.add_subcommand("generate", "render a synthetic dataset");
    generate->add_option("--config", generate_flags.config, "scene config file");
    generate->add_option("--out", generate_flags.out, "dataset output directory")->required();
    generate->add_option("--scene", generate_scene, "a (spin) | b (pendulum) | c (degraded)");
    generate->add_option("--seed", generate_flags.seed, "scene seed (overrides config)");
    generate->add_option("--duration", generate_duration, "sequence length, seconds");
    generate->add_option("--frame-rate", generate_frame_rate, "frames per second");

    CLI::App* track = app.add_subcommand("track", "run the tracking pipeline over a dataset");
    add_track_flags(track, track_flags);
    track->add_option("--out", track_flags.out, "trace output directory")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "score a trace against its dataset");
    eval_cmd->add_option("--dataset", eval_dataset, "dataset directory")->required();
    eval_cmd->add_option("--trace", eval_trace, "trace directory from `track`")->required();
    eval_cmd->add_option("--out", eval_out, "report output directory")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "sweep one axis and tabulate metrics");
    add_track_flags(ablate, ablate_flags);
    ablate->add_option("--out", ablate_flags.out, "ablation output directory")->required();
    ablate->add_option("--axis", ablate_axis, "amq_n | distribution")->required();

    CLI::App* bench = app.add_subcommand("bench", "run track and assert the FPS target");
    add_track_flags(bench, bench_flags);
    bench->add_option("--out", bench_flags.out, "trace output directory");
    bench->add_option("--target", bench_target, "FPS floor (default 45)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed())
            return cmd_generate(generate_flags, generate_scene, generate_duration,
                                generate_frame_rate);
        if (track->parsed()) return cmd_track(track_flags);
        if (eval_cmd->parsed()) return cmd_eval(eval_dataset, eval_trace, eval_out);
        if (ablate->parsed()) return cmd_ablate(ablate_flags, ablate_axis);
        if (bench->parsed()) return cmd_bench(bench_flags, bench_target);
    } catch (const raypose::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const raypose::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitConfig;
    } catch (const raypose::TrackError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitOk;
}
