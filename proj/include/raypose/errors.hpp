#pragma once

#include <stdexcept>
#include <string>

namespace raypose {

// Base class for all recoverable tracking errors. The per-frame loop treats
// any TrackError as a lost frame; everything else aborts the run.
class TrackError : public std::runtime_error {
public:
    explicit TrackError(const std::string& what) : std::runtime_error(what) {}
};

#define RAYPOSE_DECLARE_ERROR(name)                                           \
    class name : public TrackError {                                          \
    public:                                                                   \
        explicit name(const std::string& what) : TrackError(what) {}          \
    }

RAYPOSE_DECLARE_ERROR(DegenerateDepth);
RAYPOSE_DECLARE_ERROR(NonPositiveDisparity);
RAYPOSE_DECLARE_ERROR(DisparityTooSmall);
RAYPOSE_DECLARE_ERROR(PyramidTooDeep);
RAYPOSE_DECLARE_ERROR(GeometryMismatch);
RAYPOSE_DECLARE_ERROR(InsufficientPoints);
RAYPOSE_DECLARE_ERROR(InsufficientObservations);
RAYPOSE_DECLARE_ERROR(NotScored);
RAYPOSE_DECLARE_ERROR(OutOfRange);
RAYPOSE_DECLARE_ERROR(EmptyModel);
RAYPOSE_DECLARE_ERROR(EmptySequence);

#undef RAYPOSE_DECLARE_ERROR

// Hard failures (bad paths, malformed files, bad config). Not recoverable
// per frame.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace raypose
