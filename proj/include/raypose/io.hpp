#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "raypose/geom.hpp"
#include "raypose/vision.hpp"

namespace raypose::io {

// Doubles round-trip exactly through text ("%.17g"), so reruns and re-reads
// are bit-identical.
std::string fmt(double v);

// Binary 8-bit PGM (P5), maxval 255; intensities quantized from/to [0,1].
void write_pgm(const std::filesystem::path& path, const vision::GrayFrame& frame);
vision::GrayFrame read_pgm(const std::filesystem::path& path);

// CSV with header "x,y,t,p", one event per row, sorted by t.
void write_events(const std::filesystem::path& path, const vision::EventBatch& batch);
vision::EventBatch read_events(const std::filesystem::path& path, int width, int height);

// model.txt: "points N", "diameter D", "symmetry K", then N "p x y z" rows and
// K "s r00 ... r22" row-major symmetry rotations.
void write_model(const std::filesystem::path& path, const geom::ObjectModel& model);
geom::ObjectModel read_model(const std::filesystem::path& path);

// rig.txt: "left fx fy cx cy w h", "right ...", "baseline b".
void write_rig(const std::filesystem::path& path, const geom::StereoRig& rig);
geom::StereoRig read_rig(const std::filesystem::path& path);

// poses.txt: one row per frame, 12 values, row-major 3x4 [R|t].
void write_poses(const std::filesystem::path& path, const std::vector<geom::Pose>& poses);
std::vector<geom::Pose> read_poses(const std::filesystem::path& path);

struct ManifestRow {
    long idx = 0;
    double t = 0.0;
    std::string bin;
    double v = 0.0;
};

// CSV with header "idx,t,bin,v".
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// Flat "section.key = value" config; '#' starts a comment, blank lines are
// skipped. Duplicate keys and rows without '=' are ConfigError.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_config(const std::filesystem::path& path);

// Typed lookups; a present key that fails to parse is ConfigError. `used`
// collects consumed keys so callers can reject unknown ones.
double get_double(const KeyValues& kv, const std::string& key, double fallback,
                  std::vector<std::string>* used = nullptr);
long get_long(const KeyValues& kv, const std::string& key, long fallback,
              std::vector<std::string>* used = nullptr);
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback,
              std::vector<std::string>* used = nullptr);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback,
                       std::vector<std::string>* used = nullptr);

// Throws ConfigError naming the first key in `kv` not present in `used`.
void reject_unknown_keys(const KeyValues& kv, const std::vector<std::string>& used);

std::string frame_name(const char* prefix, long index);  // e.g. "L_000012"

}  // namespace raypose::io
