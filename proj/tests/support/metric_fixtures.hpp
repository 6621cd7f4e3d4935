#pragma once

#include <array>

namespace fixtures {

/// Reported (F, P, R) triples in percent, two decimals.
struct Triple {
  double f, p, r;
};

inline constexpr std::array<Triple, 28> kReportedTriples{{
    {60.52, 63.25, 58.01}, {56.97, 61.54, 53.04}, {64.71, 69.18, 60.77}, {57.74, 62.58, 53.59},
    {39.76, 43.71, 36.46}, {38.35, 41.14, 35.91}, {46.96, 49.39, 44.75}, {40.44, 40.00, 40.88},
    {44.13, 62.00, 34.25}, {44.83, 59.63, 35.91}, {55.43, 54.55, 56.35}, {50.42, 51.14, 49.72},
    {56.04, 52.40, 60.22}, {54.25, 53.80, 54.70}, {58.38, 57.14, 59.67}, {53.04, 53.04, 53.04},
    {64.58, 74.64, 56.91}, {61.30, 69.72, 54.70}, {66.12, 64.89, 67.40}, {60.53, 57.79, 63.54},
    {62.78, 75.78, 53.59}, {64.65, 82.76, 53.04}, {63.36, 63.19, 63.54}, {63.31, 68.15, 59.12},
    {65.78, 82.50, 54.70}, {70.47, 89.74, 58.01}, {69.44, 75.00, 64.64}, {69.16, 79.29, 61.33},
}};

inline double harmonic(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

}  // namespace fixtures
