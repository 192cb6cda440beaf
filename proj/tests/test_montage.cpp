#include "neurotopo/error.hpp"
#include "neurotopo/montage.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

using namespace neurotopo;

TEST(Montage, HasThirtyTwoUniqueChannels) {
  const auto& m = builtin_montage32();
  EXPECT_EQ(m.size(), 32u);
  std::set<std::string> names;
  for (const auto& e : m.electrodes()) names.insert(e.name);
  EXPECT_EQ(names.size(), 32u);
  for (const char* motor : {"C3", "Cz", "C4"}) EXPECT_TRUE(m.index_of(motor).has_value()) << motor;
}

TEST(Montage, VertexAtCenter) {
  const auto p = builtin_montage32().find("Cz").pos2d;
  EXPECT_NEAR(p.x, 0.0, 1e-12);
  EXPECT_NEAR(p.y, 0.0, 1e-12);
}

TEST(Montage, MirrorPairsNegateX) {
  const auto& m = builtin_montage32();
  const auto pairs = mirror_pairs();
  EXPECT_GE(pairs.size(), 14u);
  for (const auto& [l, r] : pairs) {
    const auto a = m.find(l).pos2d, b = m.find(r).pos2d;
    EXPECT_EQ(a.x, -b.x) << l << "/" << r;
    EXPECT_EQ(a.y, b.y) << l << "/" << r;
    EXPECT_LT(a.x, 0.0) << l << " should be on the left";
  }
  EXPECT_EQ(m.find("C3").pos2d.x, -m.find("C4").pos2d.x);
}

TEST(Montage, AllInsideUnitDisc) {
  for (const auto& e : builtin_montage32().electrodes()) {
    EXPECT_LE(std::hypot(e.pos2d.x, e.pos2d.y), 1.0 + 1e-12) << e.name;
    const auto p = project(e.azimuth, e.elevation);
    EXPECT_NEAR(p.x, e.pos2d.x, 1e-12);
    EXPECT_NEAR(p.y, e.pos2d.y, 1e-12);
  }
}

TEST(Montage, ProjectionExamples) {
  const double pi = std::numbers::pi;
  auto v = project(1.234, pi / 2);
  EXPECT_NEAR(v.x, 0.0, 1e-15);
  EXPECT_NEAR(v.y, 0.0, 1e-15);
  v = project(0.0, 0.0);
  EXPECT_NEAR(v.x, 0.0, 1e-15);
  EXPECT_NEAR(v.y, 1.0, 1e-15);
  // radius (pi/2 - pi/4)/(pi/2) = 0.5 along +x
  v = project(pi / 2, pi / 4);
  EXPECT_NEAR(v.x, 0.5, 1e-12);
  EXPECT_NEAR(v.y, 0.0, 1e-12);
}

TEST(Montage, ProjectionRejectsBadElevation) {
  EXPECT_THROW(project(0.0, -0.01), DomainError);
  EXPECT_THROW(project(0.0, std::numbers::pi / 2 + 0.01), DomainError);
  EXPECT_THROW(project(0.0, std::nan("")), DomainError);
}

TEST(Montage, UnknownNameThrows) {
  EXPECT_THROW(builtin_montage32().find("Xx9"), DomainError);
  EXPECT_FALSE(builtin_montage32().index_of("Xx9").has_value());
}

TEST(Montage, HeadCircleGeometry) {
  const auto c = Montage::head_radius_px(840, 630);
  EXPECT_DOUBLE_EQ(c.cx, 420.0);
  EXPECT_DOUBLE_EQ(c.cy, 315.0);
  EXPECT_DOUBLE_EQ(c.radius, 0.48 * 630);
}

TEST(Montage, ElectrodePixelsInsideDiscAndMirrored) {
  const auto& m = builtin_montage32();
  for (int w : {840, 84, 64}) {
    const int h = w * 3 / 4;
    const auto circle = Montage::head_radius_px(w, h);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto px = m.electrode_pixel(i, w, h);
      EXPECT_TRUE(circle.contains(px[0] + 0.5, px[1] + 0.5)) << m[i].name << " at " << w;
    }
  }
  // Nose points up: Fz sits above Pz.
  const auto fz = m.electrode_pixel(*m.index_of("Fz"), 840, 630);
  const auto pz = m.electrode_pixel(*m.index_of("Pz"), 840, 630);
  EXPECT_LT(fz[1], pz[1]);
  // C3 on the left half of the image.
  EXPECT_LT(m.electrode_pixel(*m.index_of("C3"), 840, 630)[0], 420);
}

TEST(Montage, CsvFormat) {
  const auto csv = montage_csv(builtin_montage32());
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "name,azimuth,elevation,x,y");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.rfind("Cz,", 0) == 0) EXPECT_EQ(line, "Cz,0.000000,1.570796,0.000000,0.000000");
  }
  EXPECT_EQ(rows, 32);
}
