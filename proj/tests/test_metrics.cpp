#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "srscn/metrics.hpp"
#include "srscn/phantom.hpp"
#include "srscn/rng.hpp"

using namespace srscn;
using metrics::BinaryMask;
using metrics::HdMode;

namespace {

BinaryMask random_mask(Rng& rng, int h, int w, double density, double dy = 1.0, double dx = 1.0) {
  BinaryMask m = BinaryMask::make2d(h, w, dy, dx);
  for (auto& v : m.m) v = rng.uniform() < density;
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("dice on hand-countable masks") {
  BinaryMask a = BinaryMask::make2d(4, 4), b = BinaryMask::make2d(4, 4);
  SUBCASE("identical nonempty masks give 1") {
    a.set(0, 1, 1, true);
    a.set(0, 1, 2, true);
    b = a;
    CHECK(metrics::dice_binary(a, b) == 1.0);
  }
  SUBCASE("disjoint masks give 0") {
    a.set(0, 0, 0, true);
    b.set(0, 3, 3, true);
    CHECK(metrics::dice_binary(a, b) == 0.0);
  }
  SUBCASE("a 2x2 block against itself shifted one column gives 0.5") {
    for (int y = 1; y <= 2; ++y)
      for (int x = 1; x <= 2; ++x) a.set(0, y, x, true);
    for (int y = 1; y <= 2; ++y)
      for (int x = 2; x <= 3; ++x) b.set(0, y, x, true);
    CHECK(metrics::dice_binary(a, b) == 0.5);  // 2*2/(4+4), exact in binary
  }
  SUBCASE("both empty is defined as 1") { CHECK(metrics::dice_binary(a, b) == 1.0); }
  SUBCASE("shape mismatch throws") {
    const BinaryMask c = BinaryMask::make2d(4, 5);
    CHECK_THROWS_AS(metrics::dice_binary(a, c), ShapeError);
  }
}

TEST_CASE("boundary extraction") {
  SUBCASE("a single pixel is its own boundary") {
    BinaryMask m = BinaryMask::make2d(5, 5);
    m.set(0, 2, 3, true);
    const auto b = metrics::extract_boundary(m);
    REQUIRE(b.size() == 1);
    CHECK(b.idx[0] == std::array<int, 3>{0, 2, 3});
  }
  SUBCASE("a filled 4x4 block has the 12 perimeter pixels as boundary") {
    BinaryMask m = BinaryMask::make2d(6, 6);
    for (int y = 1; y <= 4; ++y)
      for (int x = 1; x <= 4; ++x) m.set(0, y, x, true);
    CHECK(metrics::extract_boundary(m).size() == 12);
  }
  SUBCASE("grid border counts as background") {
    BinaryMask m = BinaryMask::make2d(4, 4);
    for (auto& v : m.m) v = 1;
    CHECK(metrics::extract_boundary(m).size() == 12);  // interior 2x2 is not boundary
  }
  SUBCASE("empty mask, empty boundary") {
    CHECK(metrics::extract_boundary(BinaryMask::make2d(4, 4)).size() == 0);
  }
}

TEST_CASE("asd on hand-computable cases") {
  SUBCASE("identical masks give 0") {
    BinaryMask a = BinaryMask::make2d(8, 8);
    a.set(0, 3, 3, true);
    a.set(0, 3, 4, true);
    CHECK(metrics::asd(a, a) == 0.0);
  }
  SUBCASE("single pixels 3 apart, unit spacing: (3+3)/(1+1) = 3 mm") {
    BinaryMask a = BinaryMask::make2d(8, 8), b = BinaryMask::make2d(8, 8);
    a.set(0, 2, 2, true);
    b.set(0, 2, 5, true);
    CHECK(metrics::asd(a, b) == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("doubling the spacing along the offset axis doubles the value") {
    BinaryMask a = BinaryMask::make2d(8, 8, 1.0, 2.0), b = BinaryMask::make2d(8, 8, 1.0, 2.0);
    a.set(0, 2, 2, true);
    b.set(0, 2, 5, true);
    CHECK(metrics::asd(a, b) == doctest::Approx(6.0).epsilon(1e-12));
  }
  SUBCASE("empty mask is an undefined-metric error") {
    BinaryMask a = BinaryMask::make2d(4, 4), b = BinaryMask::make2d(4, 4);
    b.set(0, 1, 1, true);
    CHECK_THROWS_AS(metrics::asd(a, b), UndefinedMetricError);
  }
}

TEST_CASE("hausdorff on hand-computable cases") {
  SUBCASE("identical masks give 0 in both modes") {
    BinaryMask a = BinaryMask::make2d(6, 6);
    a.set(0, 1, 1, true);
    a.set(0, 2, 1, true);
    CHECK(metrics::hausdorff(a, a, HdMode::Directed) == 0.0);
    CHECK(metrics::hausdorff(a, a, HdMode::Symmetric) == 0.0);
  }
  SUBCASE("a strict subset has directed distance 0 but symmetric > 0") {
    BinaryMask seg = BinaryMask::make2d(8, 8), gs = BinaryMask::make2d(8, 8);
    for (int y = 3; y <= 4; ++y)
      for (int x = 3; x <= 4; ++x) gs.set(0, y, x, true);
    seg.set(0, 3, 3, true);
    CHECK(metrics::hausdorff(seg, gs, HdMode::Directed) == 0.0);
    CHECK(metrics::hausdorff(seg, gs, HdMode::Symmetric) > 0.0);
  }
  SUBCASE("single pixels 5 apart, unit spacing: 5 mm") {
    BinaryMask a = BinaryMask::make2d(8, 8), b = BinaryMask::make2d(8, 8);
    a.set(0, 1, 1, true);
    b.set(0, 1, 6, true);
    CHECK(metrics::hausdorff(a, b, HdMode::Symmetric) == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("fast paths match the brute-force oracle within 1e-9 mm") {
  Rng rng(2024);
  int done = 0;
  while (done < 80) {
    const int h = 4 + static_cast<int>(rng.uniform_int(0, 28));
    const int w = 4 + static_cast<int>(rng.uniform_int(0, 28));
    const double dy = rng.uniform(0.5, 3.0), dx = rng.uniform(0.5, 3.0);
    BinaryMask a = random_mask(rng, h, w, rng.uniform(0.05, 0.6), dy, dx);
    BinaryMask b = random_mask(rng, h, w, rng.uniform(0.05, 0.6), dy, dx);
    if (a.count() == 0 || b.count() == 0) continue;
    ++done;
    CHECK(std::abs(metrics::asd(a, b) - oracles::brute_asd(a, b)) < 1e-9);
    CHECK(std::abs(metrics::hausdorff(a, b, HdMode::Directed) - oracles::brute_hausdorff_directed(a, b)) < 1e-9);
    const double sym = std::max(oracles::brute_hausdorff_directed(a, b), oracles::brute_hausdorff_directed(b, a));
    CHECK(std::abs(metrics::hausdorff(a, b, HdMode::Symmetric) - sym) < 1e-9);
  }
}

TEST_CASE("fast paths match the oracle on anisotropic 3D masks") {
  Rng rng(77);
  for (int rep = 0; rep < 12; ++rep) {
    BinaryMask a = BinaryMask::make3d(4, 10, 10, rng.uniform(2.0, 10.0), 1.5, 1.5);
    BinaryMask b = a;
    for (auto& v : a.m) v = rng.uniform() < 0.3;
    for (auto& v : b.m) v = rng.uniform() < 0.3;
    if (a.count() == 0 || b.count() == 0) continue;
    CHECK(std::abs(metrics::asd(a, b) - oracles::brute_asd(a, b)) < 1e-9);
    CHECK(std::abs(metrics::hausdorff(a, b, HdMode::Directed) - oracles::brute_hausdorff_directed(a, b)) < 1e-9);
  }
}

TEST_CASE("asd and symmetric hausdorff are symmetric; directed is not") {
  Rng rng(31);
  BinaryMask a = random_mask(rng, 16, 16, 0.3), b = random_mask(rng, 16, 16, 0.3);
  REQUIRE(a.count() > 0);
  REQUIRE(b.count() > 0);
  CHECK(metrics::asd(a, b) == doctest::Approx(metrics::asd(b, a)).epsilon(1e-12));
  CHECK(metrics::hausdorff(a, b, HdMode::Symmetric) ==
        doctest::Approx(metrics::hausdorff(b, a, HdMode::Symmetric)).epsilon(1e-12));
  // witness pair: a strict subset makes the directed value order-dependent
  BinaryMask seg = BinaryMask::make2d(8, 8), gs = BinaryMask::make2d(8, 8);
  gs.set(0, 2, 2, true);
  gs.set(0, 2, 6, true);
  seg.set(0, 2, 2, true);
  CHECK(metrics::hausdorff(seg, gs, HdMode::Directed) != metrics::hausdorff(gs, seg, HdMode::Directed));
}

TEST_CASE("dilating the reference to a superset drives directed HD to 0") {
  Rng rng(32);
  const BinaryMask seg = random_mask(rng, 12, 12, 0.25);
  BinaryMask gs = seg;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x)
      if (seg.at(0, y, x))
        for (int dy2 = -1; dy2 <= 1; ++dy2)
          for (int dx2 = -1; dx2 <= 1; ++dx2) {
            const int yy = y + dy2, xx = x + dx2;
            if (yy >= 0 && yy < 12 && xx >= 0 && xx < 12) gs.set(0, yy, xx, true);
          }
  REQUIRE(seg.count() > 0);
  CHECK(metrics::hausdorff(seg, gs, HdMode::Directed) == 0.0);
}

TEST_CASE("scaling the spacing scales distances exactly") {
  Rng rng(33);
  BinaryMask a = random_mask(rng, 14, 14, 0.3, 1.25, 0.75);
  BinaryMask b = random_mask(rng, 14, 14, 0.3, 1.25, 0.75);
  REQUIRE(a.count() > 0);
  REQUIRE(b.count() > 0);
  const double c = 3.5;
  BinaryMask ac = a, bc = b;
  for (auto& s : ac.spacing) s *= c;
  for (auto& s : bc.spacing) s *= c;
  CHECK(metrics::asd(ac, bc) == doctest::Approx(c * metrics::asd(a, b)).epsilon(1e-12));
  CHECK(metrics::hausdorff(ac, bc, HdMode::Symmetric) ==
        doctest::Approx(c * metrics::hausdorff(a, b, HdMode::Symmetric)).epsilon(1e-12));
}

TEST_CASE("evaluate_case on a perfect prediction") {
  phantom::PhantomConfig cfg;
  cfg.seed = 8;
  const auto v = phantom::generate_phantom(cfg);
  const auto rep = metrics::evaluate_case("case", v.labels, v.labels, v.dims, v.spacing);
  REQUIRE(rep.structures.size() == 3);
  CHECK(rep.structures[0].first == "Myo");
  CHECK(rep.structures[1].first == "LV");
  CHECK(rep.structures[2].first == "RV");
  for (const auto& [name, s] : rep.structures) {
    CAPTURE(name);
    CHECK(s.dice == 1.0);
    REQUIRE(s.asd_mm.has_value());
    REQUIRE(s.hd_mm.has_value());
    CHECK(*s.asd_mm == 0.0);
    CHECK(*s.hd_mm == 0.0);
    CHECK(s.flags.empty());
  }
}

TEST_CASE("structures empty on both sides get Dice 1 and flagged distances") {
  const std::array<int, 3> dims = {1, 8, 8};
  std::vector<uint8_t> labels(64, 0);
  labels[9] = 1;  // LV present, Myo/RV absent
  const auto rep = metrics::evaluate_case("c", labels, labels, dims, {1, 1, 1});
  CHECK(rep.of("LV").dice == 1.0);
  CHECK(rep.of("Myo").dice == 1.0);
  CHECK(rep.of("Myo").flags == "empty_both");
  CHECK_FALSE(rep.of("Myo").asd_mm.has_value());
  CHECK(rep.of("RV").flags == "empty_both");
}

TEST_CASE("csv rows carry the documented column order") {
  const std::array<int, 3> dims = {1, 8, 8};
  std::vector<uint8_t> labels(64, 0);
  labels[9] = 1;
  const auto rep = metrics::evaluate_case("caseX", labels, labels, dims, {1, 1, 1});
  const auto path = std::filesystem::temp_directory_path() / "srscn_metrics_test.csv";
  metrics::write_reports_csv(path, {rep});
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "case_id,structure,dice,asd_mm,hd_mm,flags");
  std::string row;
  std::getline(in, row);
  CHECK(row.rfind("caseX,Myo,1,", 0) == 0);
  std::filesystem::remove(path);
}

TEST_SUITE_END();
