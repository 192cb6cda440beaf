#include "neurotopo/montage.hpp"

#include "neurotopo/error.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <unordered_set>

namespace neurotopo {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Site {
  const char* name;
  double azimuth_deg;
  double elevation_deg;
};

// Spherical 10-10 template: the Fp/F7/T7/P7/O1 circumference sits on the
// equator, C3/C4/Fz/Pz on the 45 degree ring. Right-hemisphere sites are the
// exact mirror of their left partners.
constexpr Site kSites[] = {
    {"Fp1", -18.0, 0.0},  {"Fp2", 18.0, 0.0},   {"F7", -54.0, 0.0},    {"F3", -45.0, 45.0},
    {"Fz", 0.0, 45.0},    {"F4", 45.0, 45.0},   {"F8", 54.0, 0.0},     {"FC5", -69.0, 22.5},
    {"FC1", -45.0, 67.5}, {"FC2", 45.0, 67.5},  {"FC6", 69.0, 22.5},   {"T7", -90.0, 0.0},
    {"C3", -90.0, 45.0},  {"Cz", 0.0, 90.0},    {"C4", 90.0, 45.0},    {"T8", 90.0, 0.0},
    {"TP9", -108.0, 0.0}, {"CP5", -111.0, 22.5}, {"CP1", -135.0, 67.5}, {"CP2", 135.0, 67.5},
    {"CP6", 111.0, 22.5}, {"TP10", 108.0, 0.0}, {"P7", -126.0, 0.0},   {"P3", -135.0, 45.0},
    {"Pz", 180.0, 45.0},  {"P4", 135.0, 45.0},  {"P8", 126.0, 0.0},    {"PO9", -144.0, 0.0},
    {"O1", -162.0, 0.0},  {"Oz", 180.0, 0.0},   {"O2", 162.0, 0.0},    {"PO10", 144.0, 0.0},
};

Montage make_builtin() {
  std::vector<Electrode> electrodes;
  electrodes.reserve(std::size(kSites));
  for (const auto& s : kSites) {
    Electrode e;
    e.name = s.name;
    e.azimuth = s.azimuth_deg * kDeg;
    e.elevation = s.elevation_deg * kDeg;
    e.pos2d = project(e.azimuth, e.elevation);
    electrodes.push_back(std::move(e));
  }
  return Montage(std::move(electrodes));
}

} // namespace

bool HeadCircle::contains(double px, double py) const {
  const double dx = px - cx;
  const double dy = py - cy;
  return dx * dx + dy * dy <= radius * radius;
}

Vec2 project(double azimuth, double elevation) {
  if (!(elevation >= 0.0 && elevation <= std::numbers::pi / 2)) {
    throw DomainError("montage", "elevation outside [0, pi/2]");
  }
  const double half_pi = std::numbers::pi / 2;
  const double r = (half_pi - elevation) / half_pi;
  if (r == 0.0) return {0.0, 0.0};
  return {r * std::sin(azimuth), r * std::cos(azimuth)};
}

Montage::Montage(std::vector<Electrode> electrodes) : electrodes_(std::move(electrodes)) {
  if (electrodes_.size() != kChannelCount) {
    throw DomainError("montage", "montage must contain exactly 32 electrodes");
  }
  std::unordered_set<std::string> seen;
  for (const auto& e : electrodes_) {
    if (!seen.insert(e.name).second) {
      throw DomainError("montage", "duplicate electrode name " + e.name);
    }
    if (e.pos2d.x * e.pos2d.x + e.pos2d.y * e.pos2d.y > 1.0 + 1e-12) {
      throw DomainError("montage", "electrode outside the unit disc: " + e.name);
    }
  }
}

const Electrode& Montage::find(std::string_view name) const {
  if (auto i = index_of(name)) return electrodes_[*i];
  throw DomainError("montage", "unknown electrode " + std::string(name));
}

std::optional<std::size_t> Montage::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < electrodes_.size(); ++i) {
    if (electrodes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::string> Montage::names() const {
  std::vector<std::string> out;
  out.reserve(electrodes_.size());
  for (const auto& e : electrodes_) out.push_back(e.name);
  return out;
}

HeadCircle Montage::head_radius_px(int width, int height) {
  if (width <= 0 || height <= 0) throw DomainError("montage", "image size must be positive");
  return {width / 2.0, height / 2.0, 0.48 * std::min(width, height)};
}

std::array<int, 2> Montage::electrode_pixel(std::size_t index, int width, int height) const {
  const HeadCircle head = head_radius_px(width, height);
  const Vec2 p = electrodes_.at(index).pos2d;
  const double px = head.cx + p.x * head.radius;
  const double py = head.cy - p.y * head.radius;
  // Search the pixel centers around the continuous location; rim electrodes
  // may round to a center just outside the disc.
  const int ci = static_cast<int>(std::floor(px));
  const int cj = static_cast<int>(std::floor(py));
  std::array<int, 2> best{-1, -1};
  double best_d = 0.0;
  for (int dj = -1; dj <= 1; ++dj) {
    for (int di = -1; di <= 1; ++di) {
      const int i = ci + di;
      const int j = cj + dj;
      if (i < 0 || j < 0 || i >= width || j >= height) continue;
      const double x = i + 0.5;
      const double y = j + 0.5;
      if (!head.contains(x, y)) continue;
      const double d = (x - px) * (x - px) + (y - py) * (y - py);
      if (best[0] < 0 || d < best_d) {
        best = {i, j};
        best_d = d;
      }
    }
  }
  if (best[0] < 0) throw DomainError("montage", "image too small to place electrode");
  return best;
}

const Montage& builtin_montage32() {
  static const Montage montage = make_builtin();
  return montage;
}

std::vector<std::pair<std::string, std::string>> mirror_pairs() {
  return {{"Fp1", "Fp2"}, {"F7", "F8"},   {"F3", "F4"},   {"FC5", "FC6"}, {"FC1", "FC2"},
          {"T7", "T8"},   {"C3", "C4"},   {"TP9", "TP10"}, {"CP5", "CP6"}, {"CP1", "CP2"},
          {"P7", "P8"},   {"P3", "P4"},   {"PO9", "PO10"}, {"O1", "O2"}};
}

std::string montage_csv(const Montage& montage) {
  std::string out = "name,azimuth,elevation,x,y\n";
  char buf[160];
  for (const auto& e : montage.electrodes()) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f\n", e.name.c_str(), e.azimuth,
                  e.elevation, e.pos2d.x, e.pos2d.y);
    out += buf;
  }
  return out;
}

} // namespace neurotopo
