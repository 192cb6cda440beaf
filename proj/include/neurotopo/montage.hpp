#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace neurotopo {

struct Vec2 {
  double x{0.0};
  double y{0.0};
};

struct Electrode {
  std::string name;
  double azimuth{0.0};    // radians, 0 = nose, positive towards the right ear
  double elevation{0.0};  // radians above the equator, pi/2 = vertex
  Vec2 pos2d;             // head-disc coordinates, +y towards the nose
};

// Pixel-space head circle for a w x h image. Pixel (i, j) has its center at
// (i + 0.5, j + 0.5); image rows grow downwards, so +y on the disc maps to
// smaller row coordinates.
struct HeadCircle {
  double cx{0.0};
  double cy{0.0};
  double radius{0.0};

  bool contains(double px, double py) const;
};

inline constexpr std::size_t kChannelCount = 32;

class Montage {
 public:
  explicit Montage(std::vector<Electrode> electrodes);

  const std::vector<Electrode>& electrodes() const { return electrodes_; }
  std::size_t size() const { return electrodes_.size(); }
  const Electrode& operator[](std::size_t i) const { return electrodes_[i]; }

  // Throws DomainError when the name is unknown.
  const Electrode& find(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;

  std::vector<std::string> names() const;

  static HeadCircle head_radius_px(int width, int height);

  // Pixel column/row of the pixel center closest to the electrode that still
  // lies inside the head disc.
  std::array<int, 2> electrode_pixel(std::size_t index, int width, int height) const;

 private:
  std::vector<Electrode> electrodes_;
};

// Azimuthal-equidistant projection of a point on the upper hemisphere.
Vec2 project(double azimuth, double elevation);

// Fixed actiCAP-style 32-channel 10-10 layout. Channel order is the canonical
// order used by every trial and every topogram.
const Montage& builtin_montage32();

// Pairs (left, right) of mirror electrodes in the builtin montage.
std::vector<std::pair<std::string, std::string>> mirror_pairs();

// name,azimuth,elevation,x,y with 6-decimal fixed formatting.
std::string montage_csv(const Montage& montage);

} // namespace neurotopo
