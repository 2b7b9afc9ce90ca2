#pragma once

// Physical constants (SI). Values follow the 2019 redefinition where the
// magnetic constant is no longer exactly 4*pi*1e-7; the classical value is
// kept here because every downstream quantity is a ratio that absorbs the
// 1e-10 difference.

namespace cpwkit {

constexpr double kSpeedOfLight = 299792458.0;           // m/s
constexpr double kMu0 = 1.25663706212e-06;              // H/m
constexpr double kEps0 = 8.8541878128e-12;              // F/m
constexpr double kPi = 3.14159265358979323846;

}  // namespace cpwkit
