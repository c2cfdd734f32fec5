#pragma once

#include <string>

#include "denseface/error.hpp"

namespace df {

// Head pose as Euler angles in degrees, each in [-45, 45].
struct PoseCondition {
    double yaw = 0.0, pitch = 0.0, roll = 0.0;

    void validate() const {
        for (double v : {yaw, pitch, roll})
            if (!(v >= -45.0 && v <= 45.0))
                throw DomainError("pose angle " + std::to_string(v) + " outside [-45,45]");
    }
};

inline double deg2rad(double d) { return d * 3.14159265358979323846 / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / 3.14159265358979323846; }

}  // namespace df
