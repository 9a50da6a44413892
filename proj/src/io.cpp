#include "raypose/io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "raypose/errors.hpp"

namespace raypose::io {
namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = {}) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

double parse_double(const std::string& text, const std::string& context) {
    const std::string t = trim(text);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size())
        throw IoError(context + ": cannot parse '" + t + "' as a number");
    return v;
}

long parse_long(const std::string& text, const std::string& context) {
    const std::string t = trim(text);
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (t.empty() || end != t.c_str() + t.size())
        throw IoError(context + ": cannot parse '" + t + "' as an integer");
    return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream stream(line);
    while (std::getline(stream, item, sep)) parts.push_back(item);
    return parts;
}

}  // namespace

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string frame_name(const char* prefix, long index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06ld", prefix, index);
    return buf;
}

void write_pgm(const std::filesystem::path& path, const vision::GrayFrame& frame) {
    if (frame.width < 1 || frame.height < 1)
        throw IoError("refusing to write empty frame to " + path.string());
    auto out = open_out(path);
    out << "P5\n" << frame.width << " " << frame.height << "\n255\n";
    std::vector<unsigned char> bytes(frame.pixels.size());
    for (size_t i = 0; i < frame.pixels.size(); ++i) {
        const double v = std::clamp(static_cast<double>(frame.pixels[i]), 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

vision::GrayFrame read_pgm(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::binary);
    auto next_token = [&]() -> std::string {
        std::string token;
        while (in >> token) {
            if (token[0] != '#') return token;
            std::string rest;
            std::getline(in, rest);  // comment to end of line
        }
        throw IoError("truncated PGM header in " + path.string());
    };
    if (next_token() != "P5") throw IoError(path.string() + " is not a binary PGM (P5)");
    const long width = parse_long(next_token(), path.string());
    const long height = parse_long(next_token(), path.string());
    const long maxval = parse_long(next_token(), path.string());
    if (width < 1 || height < 1 || maxval < 1 || maxval > 255)
        throw IoError(path.string() + " has an unsupported PGM geometry");
    in.get();  // single whitespace after maxval
    vision::GrayFrame frame(static_cast<int>(width), static_cast<int>(height));
    std::vector<unsigned char> bytes(frame.pixels.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("truncated PGM payload in " + path.string());
    for (size_t i = 0; i < bytes.size(); ++i)
        frame.pixels[i] = static_cast<float>(bytes[i] / static_cast<double>(maxval));
    return frame;
}

void write_events(const std::filesystem::path& path, const vision::EventBatch& batch) {
    auto out = open_out(path);
    out << "x,y,t,p\n";
    for (const vision::Event& e : batch.events)
        out << e.x << ',' << e.y << ',' << fmt(e.t) << ',' << e.polarity << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

vision::EventBatch read_events(const std::filesystem::path& path, int width, int height) {
    auto in = open_in(path);
    vision::EventBatch batch;
    batch.width = width;
    batch.height = height;
    std::string line;
    if (!std::getline(in, line) || trim(line) != "x,y,t,p")
        throw IoError(path.string() + " is missing the x,y,t,p header");
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto parts = split(line, ',');
        if (parts.size() != 4) throw IoError(path.string() + ": malformed event row '" + line + "'");
        vision::Event e;
        e.x = static_cast<int>(parse_long(parts[0], path.string()));
        e.y = static_cast<int>(parse_long(parts[1], path.string()));
        e.t = parse_double(parts[2], path.string());
        e.polarity = static_cast<int>(parse_long(parts[3], path.string()));
        batch.events.push_back(e);
    }
    return batch;
}

void write_model(const std::filesystem::path& path, const geom::ObjectModel& model) {
    auto out = open_out(path);
    out << "points " << model.points.size() << "\n";
    out << "diameter " << fmt(model.diameter) << "\n";
    out << "symmetry " << model.symmetry_group.size() << "\n";
    for (const geom::Vec3& p : model.points)
        out << "p " << fmt(p.x()) << " " << fmt(p.y()) << " " << fmt(p.z()) << "\n";
    for (const geom::Rotation& r : model.symmetry_group) {
        out << "s";
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) out << " " << fmt(r.matrix()(i, j));
        out << "\n";
    }
    if (!out) throw IoError("short write to " + path.string());
}

geom::ObjectModel read_model(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string keyword;
    long point_count = 0, symmetry_count = 0;
    geom::ObjectModel model;
    auto expect = [&](const char* name) {
        if (!(in >> keyword) || keyword != name)
            throw IoError(path.string() + ": expected '" + name + "' in model header");
    };
    expect("points");
    in >> point_count;
    expect("diameter");
    in >> model.diameter;
    expect("symmetry");
    in >> symmetry_count;
    if (!in || point_count < 0 || symmetry_count < 0)
        throw IoError(path.string() + ": malformed model header");
    for (long i = 0; i < point_count; ++i) {
        double x, y, z;
        if (!(in >> keyword >> x >> y >> z) || keyword != "p")
            throw IoError(path.string() + ": malformed model point row");
        model.points.emplace_back(x, y, z);
    }
    for (long i = 0; i < symmetry_count; ++i) {
        geom::Mat3 m;
        in >> keyword;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) in >> m(r, c);
        if (!in || keyword != "s")
            throw IoError(path.string() + ": malformed model symmetry row");
        try {
            model.symmetry_group.push_back(geom::Rotation::from_matrix(m));
        } catch (const TrackError& e) {
            throw IoError(path.string() + ": invalid symmetry rotation (" + e.what() + ")");
        }
    }
    try {
        model.validate();
    } catch (const TrackError& e) {
        throw IoError(path.string() + ": invalid model (" + e.what() + ")");
    }
    return model;
}

void write_rig(const std::filesystem::path& path, const geom::StereoRig& rig) {
    auto out = open_out(path);
    auto eye = [&](const char* name, const geom::CameraIntrinsics& k) {
        out << name << " " << fmt(k.fx) << " " << fmt(k.fy) << " " << fmt(k.cx) << " "
            << fmt(k.cy) << " " << k.width << " " << k.height << "\n";
    };
    eye("left", rig.left);
    eye("right", rig.right);
    out << "baseline " << fmt(rig.baseline) << "\n";
    if (!out) throw IoError("short write to " + path.string());
}

geom::StereoRig read_rig(const std::filesystem::path& path) {
    auto in = open_in(path);
    geom::StereoRig rig;
    std::string keyword;
    auto eye = [&](const char* name, geom::CameraIntrinsics& k) {
        if (!(in >> keyword >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height) ||
            keyword != name)
            throw IoError(path.string() + ": malformed '" + name + "' rig row");
    };
    eye("left", rig.left);
    eye("right", rig.right);
    if (!(in >> keyword >> rig.baseline) || keyword != "baseline")
        throw IoError(path.string() + ": malformed baseline row");
    try {
        rig.validate();
    } catch (const TrackError& e) {
        throw IoError(path.string() + ": invalid rig (" + e.what() + ")");
    }
    return rig;
}

void write_poses(const std::filesystem::path& path, const std::vector<geom::Pose>& poses) {
    auto out = open_out(path);
    for (const geom::Pose& pose : poses) {
        const geom::Mat3& r = pose.rotation.matrix();
        for (int i = 0; i < 3; ++i) {
            out << fmt(r(i, 0)) << " " << fmt(r(i, 1)) << " " << fmt(r(i, 2)) << " "
                << fmt(pose.center(i));
            out << (i == 2 ? "\n" : " ");
        }
    }
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<geom::Pose> read_poses(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<geom::Pose> poses;
    std::string line;
    long row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        std::istringstream stream(line);
        double v[12];
        for (double& x : v)
            if (!(stream >> x))
                throw IoError(path.string() + ": pose row " + std::to_string(row) +
                              " needs 12 values");
        geom::Mat3 m;
        m << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
        geom::Pose pose;
        try {
            pose.rotation = geom::Rotation::from_matrix(m);
        } catch (const TrackError& e) {
            throw IoError(path.string() + ": pose row " + std::to_string(row) +
                          " has an invalid rotation (" + e.what() + ")");
        }
        pose.center = geom::Vec3(v[3], v[7], v[11]);
        poses.push_back(pose);
    }
    return poses;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    auto out = open_out(path);
    out << "idx,t,bin,v\n";
    for (const ManifestRow& row : rows)
        out << row.idx << ',' << fmt(row.t) << ',' << row.bin << ',' << fmt(row.v) << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<ManifestRow> rows;
    std::string line;
    if (!std::getline(in, line) || trim(line) != "idx,t,bin,v")
        throw IoError(path.string() + " is missing the idx,t,bin,v header");
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto parts = split(line, ',');
        if (parts.size() != 4)
            throw IoError(path.string() + ": malformed manifest row '" + line + "'");
        ManifestRow row;
        row.idx = parse_long(parts[0], path.string());
        row.t = parse_double(parts[1], path.string());
        row.bin = trim(parts[2]);
        row.v = parse_double(parts[3], path.string());
        rows.push_back(row);
    }
    return rows;
}

KeyValues read_config(const std::filesystem::path& path) {
    auto in = open_in(path);
    KeyValues kv;
    std::string line;
    long row = 0;
    while (std::getline(in, line)) {
        ++row;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(row) +
                              ": expected 'section.key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path.string() + ":" + std::to_string(row) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw ConfigError(path.string() + ":" + std::to_string(row) + ": duplicate key '" +
                              key + "'");
    }
    return kv;
}

namespace {

const std::string* lookup(const KeyValues& kv, const std::string& key,
                          std::vector<std::string>* used) {
    if (used) used->push_back(key);
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
}

}  // namespace

double get_double(const KeyValues& kv, const std::string& key, double fallback,
                  std::vector<std::string>* used) {
    const std::string* v = lookup(kv, key, used);
    if (!v) return fallback;
    char* end = nullptr;
    const double parsed = std::strtod(v->c_str(), &end);
    if (v->empty() || end != v->c_str() + v->size())
        throw ConfigError("config key '" + key + "': cannot parse '" + *v + "' as a number");
    return parsed;
}

long get_long(const KeyValues& kv, const std::string& key, long fallback,
              std::vector<std::string>* used) {
    const std::string* v = lookup(kv, key, used);
    if (!v) return fallback;
    char* end = nullptr;
    const long parsed = std::strtol(v->c_str(), &end, 10);
    if (v->empty() || end != v->c_str() + v->size())
        throw ConfigError("config key '" + key + "': cannot parse '" + *v + "' as an integer");
    return parsed;
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback,
              std::vector<std::string>* used) {
    const std::string* v = lookup(kv, key, used);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + *v + "'");
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback,
                       std::vector<std::string>* used) {
    const std::string* v = lookup(kv, key, used);
    return v ? *v : fallback;
}

void reject_unknown_keys(const KeyValues& kv, const std::vector<std::string>& used) {
    for (const auto& [key, value] : kv)
        if (std::find(used.begin(), used.end(), key) == used.end())
            throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace raypose::io
