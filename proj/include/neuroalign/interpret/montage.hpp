#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace neuroalign::interpret {

class MontageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Electrode names and 2-D scalp positions on the unit disc (nose at +y, left at -x).
struct Montage {
  std::vector<std::string> names;
  std::vector<std::pair<double, double>> xy;
  std::map<std::string, std::vector<std::string>> groups;  // lobe -> electrode names

  std::size_t size() const { return names.size(); }

  // Row indices of a group's electrodes present in this montage.
  std::vector<std::size_t> group_indices(const std::string& group) const {
    auto it = groups.find(group);
    if (it == groups.end()) throw MontageError("montage has no electrode group '" + group + "'");
    std::vector<std::size_t> idx;
    for (const auto& n : it->second)
      for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == n) idx.push_back(i);
    return idx;
  }

  void check(std::size_t n_electrodes) const {
    if (names.size() != xy.size()) throw MontageError("montage names and coordinates differ in length");
    if (names.size() != n_electrodes)
      throw MontageError("montage covers " + std::to_string(names.size()) + " electrodes, data has " + std::to_string(n_electrodes));
    for (std::size_t i = 0; i < xy.size(); ++i)
      if (std::hypot(xy[i].first, xy[i].second) > 1.0 + 1e-9)
        throw MontageError("electrode '" + names[i] + "' lies outside the unit disc");
  }

  nlohmann::json to_json() const {
    nlohmann::json e = nlohmann::json::array();
    for (std::size_t i = 0; i < names.size(); ++i) e.push_back({{"name", names[i]}, {"x", xy[i].first}, {"y", xy[i].second}});
    return {{"electrodes", e}, {"groups", groups}};
  }
};

namespace detail {

// 64-channel 10-10 cap layout.
inline const std::vector<std::string>& cap64_names() {
  static const std::vector<std::string> names{
      "Fp1", "Fz",  "F3",  "F7",  "FT9", "FC5", "FC1", "C3",  "T7",  "TP9", "CP5", "CP1", "Pz",  "P3",  "P7",  "O1",
      "Oz",  "O2",  "P4",  "P8",  "TP10", "CP6", "CP2", "Cz",  "C4",  "T8",  "FT10", "FC6", "FC2", "F4",  "F8",  "Fp2",
      "AF7", "AF3", "AFz", "F1",  "F5",  "FT7", "FC3", "C1",  "C5",  "TP7", "CP3", "P1",  "P5",  "PO7", "PO3", "POz",
      "PO4", "PO8", "P6",  "P2",  "CPz", "CP4", "TP8", "C6",  "C2",  "FC4", "FT8", "F6",  "AF8", "AF4", "F2",  "Iz"};
  return names;
}

// Approximate azimuthal projection from the 10-10 naming scheme: the row prefix fixes the
// anterior-posterior position, the number fixes the lateral offset (odd = left). Radius 0.8 is
// the 10-20 circumference (Fpz, T7, Oz).
inline std::pair<double, double> position_from_name(const std::string& name) {
  std::size_t split = 0;
  while (split < name.size() && std::isalpha(static_cast<unsigned char>(name[split]))) ++split;
  std::string row = name.substr(0, split), col = name.substr(split);
  if (!row.empty() && row.back() == 'z') {
    row.pop_back();
    col = "z";
  }
  static const std::map<std::string, double> row_deg{{"Fp", 72}, {"AF", 54}, {"F", 36},   {"FC", 18}, {"FT", 18},
                                                      {"C", 0},   {"T", 0},   {"CP", -18}, {"TP", -18}, {"P", -36},
                                                      {"PO", -54}, {"O", -72}, {"I", -86}};
  auto it = row_deg.find(row);
  if (it == row_deg.end()) throw MontageError("cannot place electrode '" + name + "'");
  const double ring = 0.8;
  const double y = it->second / 90.0;
  if (col == "z") return {0.0, y};
  const int n = std::stoi(col);
  const double side = n % 2 ? -1.0 : 1.0;
  const int m = (n + 1) / 2;
  if (row == "Fp" || row == "O") {
    const double az = 18.0 * M_PI / 180.0;  // first lateral step along the circumference
    return {side * ring * std::sin(az), (y > 0 ? 1 : -1) * ring * std::cos(az)};
  }
  const double half_width = std::sqrt(std::max(0.0, ring * ring - y * y));
  return {side * half_width * m / 4.0, y};
}

inline std::map<std::string, std::vector<std::string>> lobe_groups(const std::vector<std::string>& names) {
  std::map<std::string, std::vector<std::string>> g;
  for (const auto& n : names) {
    auto starts = [&](const char* p) { return n.rfind(p, 0) == 0; };
    if (starts("PO") || starts("O") || starts("I")) g["occipital"].push_back(n);
    else if (starts("P") || starts("CP")) g["parietal"].push_back(n);
    else if (starts("T") || starts("FT") || starts("TP")) g["temporal"].push_back(n);
    else if (starts("Fp") || starts("AF") || starts("F")) g["frontal"].push_back(n);
    else g["central"].push_back(n);
  }
  return g;
}

}  // namespace detail

// Built-in layout. For caps other than 64 channels an evenly spaced subset of the 64 positions is used.
inline Montage builtin_montage(std::size_t n_electrodes = 64) {
  const auto& all = detail::cap64_names();
  if (n_electrodes == 0 || n_electrodes > all.size())
    throw MontageError("built-in montage supports 1..64 electrodes, got " + std::to_string(n_electrodes));
  Montage m;
  for (std::size_t i = 0; i < n_electrodes; ++i) {
    const std::size_t k = n_electrodes == 1 ? 0 : static_cast<std::size_t>(std::lround(static_cast<double>(i) * (all.size() - 1) / (n_electrodes - 1)));
    m.names.push_back(all[k]);
    m.xy.push_back(detail::position_from_name(all[k]));
  }
  m.groups = detail::lobe_groups(m.names);
  return m;
}

// {"electrodes": [{"name", "x", "y"}...], "groups": {"occipital": [...], ...}}; groups default to
// the naming-scheme lobes.
inline Montage load_montage(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MontageError("cannot open montage '" + path + "'");
  auto j = nlohmann::json::parse(in, nullptr, false, true);
  if (j.is_discarded() || !j.contains("electrodes")) throw MontageError("montage '" + path + "' is malformed");
  Montage m;
  for (const auto& e : j["electrodes"]) {
    m.names.push_back(e.at("name").get<std::string>());
    m.xy.emplace_back(e.at("x").get<double>(), e.at("y").get<double>());
  }
  if (j.contains("groups")) m.groups = j["groups"].get<std::map<std::string, std::vector<std::string>>>();
  else m.groups = detail::lobe_groups(m.names);
  return m;
}

}  // namespace neuroalign::interpret
