#pragma once

// Dental growth measurements (distance from the pituitary gland center to
// the pteryomaxillary fissure, mm) for 27 children at ages 8, 10, 12 and 14;
// public-domain orthodontic study data, inlined as a fixture.

#include <array>
#include <string>

#include "varcomp/core.hpp"

namespace fixtures {

struct DentalRow {
  const char* id;
  std::array<double, 4> distance;
};

inline constexpr std::array<double, 4> dental_ages = {8.0, 10.0, 12.0, 14.0};

inline constexpr DentalRow dental_rows[] = {
    {"M01", {26.0, 25.0, 29.0, 31.0}}, {"M02", {21.5, 22.5, 23.0, 26.5}},
    {"M03", {23.0, 22.5, 24.0, 27.5}}, {"M04", {25.5, 27.5, 26.5, 27.0}},
    {"M05", {20.0, 23.5, 22.5, 26.0}}, {"M06", {24.5, 25.5, 27.0, 28.5}},
    {"M07", {22.0, 22.0, 24.5, 26.5}}, {"M08", {24.0, 21.5, 24.5, 25.5}},
    {"M09", {23.0, 20.5, 31.0, 26.0}}, {"M10", {27.5, 28.0, 31.0, 31.5}},
    {"M11", {23.0, 23.0, 23.5, 25.0}}, {"M12", {21.5, 23.5, 24.0, 28.0}},
    {"M13", {17.0, 24.5, 26.0, 29.5}}, {"M14", {22.5, 25.5, 25.5, 26.0}},
    {"M15", {23.0, 24.5, 26.0, 30.0}}, {"M16", {22.0, 21.5, 23.5, 25.0}},
    {"F01", {21.0, 20.0, 21.5, 23.0}}, {"F02", {21.0, 21.5, 24.0, 25.5}},
    {"F03", {20.5, 24.0, 24.5, 26.0}}, {"F04", {23.5, 24.5, 25.0, 26.5}},
    {"F05", {21.5, 23.0, 22.5, 23.5}}, {"F06", {20.0, 21.0, 21.0, 22.5}},
    {"F07", {21.5, 22.5, 23.0, 25.0}}, {"F08", {23.0, 23.0, 23.5, 24.0}},
    {"F09", {20.0, 21.0, 22.0, 21.5}}, {"F10", {16.5, 19.0, 19.0, 19.5}},
    {"F11", {24.5, 25.0, 28.0, 28.0}},
};

inline varcomp::Dataset dental_dataset() {
  varcomp::Dataset data;
  for (const auto& row : dental_rows) {
    varcomp::Individual ind;
    ind.id = row.id;
    ind.x.resize(4);
    ind.y.resize(4);
    for (int j = 0; j < 4; ++j) {
      ind.x[j] = dental_ages[static_cast<std::size_t>(j)];
      ind.y[j] = row.distance[static_cast<std::size_t>(j)];
    }
    data.individuals.push_back(std::move(ind));
  }
  return data;
}

inline std::string dental_csv() {
  std::string out = "id,x,y\n";
  for (const auto& row : dental_rows)
    for (int j = 0; j < 4; ++j)
      out += std::string(row.id) + "," + std::to_string(dental_ages[static_cast<std::size_t>(j)]) +
             "," + std::to_string(row.distance[static_cast<std::size_t>(j)]) + "\n";
  return out;
}

}  // namespace fixtures
