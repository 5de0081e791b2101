#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fictplay/view.hpp"
#include "test_util.hpp"

using namespace fictplay;

namespace {

// Two hand-built records: label byte, then R, G, B planes.
std::vector<unsigned char> cifar_fixture() {
  std::vector<unsigned char> bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<unsigned char>(r == 0 ? 3 : 9));
    for (int j = 0; j < 3072; ++j) bytes.push_back(static_cast<unsigned char>((j * 7 + r * 101) % 256));
  }
  return bytes;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Cifar10, LoadsAndSavesFixtureExactly) {
  const auto dir = test::scratch_dir("cifar");
  const auto bytes = cifar_fixture();
  write_bytes(dir + "/fixture.bin", bytes);
  const auto ds = load_cifar10<float>(dir + "/fixture.bin", Split::Test);
  ASSERT_EQ(ds.size(), 2);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(ds.split, Split::Test);
  // Channel-major planes: byte 1 + c*1024 + y*32 + x.
  EXPECT_FLOAT_EQ(ds.images.at(1, 2, 5, 7), bytes[3073 + 1 + 2 * 1024 + 5 * 32 + 7] / 255.0f);
  ds.validate();
  save_cifar10(dir + "/again.bin", ds);
  EXPECT_EQ(read_bytes(dir + "/again.bin"), bytes);
}

TEST(Cifar10, RejectsTruncatedAndBadLabels) {
  const auto dir = test::scratch_dir("cifar_bad");
  auto bytes = cifar_fixture();
  write_bytes(dir + "/short.bin", std::vector<unsigned char>(bytes.begin(), bytes.end() - 1));
  EXPECT_THROW(load_cifar10<float>(dir + "/short.bin"), IoError);
  bytes[0] = 10;
  write_bytes(dir + "/label.bin", bytes);
  EXPECT_THROW(load_cifar10<float>(dir + "/label.bin"), IoError);
  write_bytes(dir + "/empty.bin", {});
  EXPECT_THROW(load_cifar10<float>(dir + "/empty.bin"), IoError);
  EXPECT_THROW(load_cifar10<float>(dir + "/missing.bin"), IoError);
}

TEST(Synthetic, DeterministicBalancedAndInRange) {
  const auto a = make_synthetic<float>(10, 6, 16, 4);
  const auto b = make_synthetic<float>(10, 6, 16, 4);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  a.validate();
  for (int k = 0; k < 10; ++k) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), k), 6);
  EXPECT_FALSE(make_synthetic<float>(10, 6, 16, 5).images == a.images);
  EXPECT_FALSE(make_synthetic<float>(10, 6, 16, 4, Split::Test).images == a.images);
  EXPECT_THROW(make_synthetic<float>(1, 6, 16, 0), std::invalid_argument);
}

TEST(Synthetic, ClassMeansAreSeparated) {
  // Class-average images differ more between classes than the noise level.
  const auto ds = make_synthetic<double>(4, 40, 16, 0);
  const Index per = ds.image_size();
  std::vector<Eigen::ArrayXd> means(4, Eigen::ArrayXd::Zero(per));
  for (Index i = 0; i < ds.size(); ++i) means[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += ds.images.values().segment(i * per, per) / 40.0;
  for (int p = 0; p < 4; ++p)
    for (int q = p + 1; q < 4; ++q) EXPECT_GT((means[static_cast<std::size_t>(p)] - means[static_cast<std::size_t>(q)]).abs().mean(), 0.02);
}

TEST(Dataset, GatherChecksIndices) {
  const auto ds = make_synthetic<float>(2, 3, 8, 0);
  const std::vector<Index> idx{5, 0};
  const auto batch = ds.gather(idx);
  EXPECT_EQ(batch.dim(0), 2);
  EXPECT_EQ(batch.values().segment(0, ds.image_size()).matrix(), ds.images.values().segment(5 * ds.image_size(), ds.image_size()).matrix());
  EXPECT_EQ(ds.gather_labels(idx), (std::vector<int>{1, 0}));
  const std::vector<Index> bad{6};
  EXPECT_THROW(ds.gather(bad), std::out_of_range);
}

TEST(Universal, ApplyClipsToUnitRange) {
  Tensor<double> x({1, 1, 1, 2}, {0.9, 0.05});
  Tensor<double> xi({1, 1, 2}, {0.2, -0.1});
  const auto y = apply_universal(x, xi, 0.25);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
  EXPECT_THROW(apply_universal(x, xi, 0.15), std::invalid_argument);
  EXPECT_THROW(PerturbationSpec<double>::universal(xi, 0.15), std::invalid_argument);
}

TEST(Patch, DiscMaskIsSymmetricAndRound) {
  const auto m = disc_mask<double>(8);
  EXPECT_EQ(m.at(0, 0), 0);
  EXPECT_EQ(m.at(3, 3), 1);
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j) {
      EXPECT_EQ(m.at(i, j), m.at(j, i));
      EXPECT_EQ(m.at(i, j), m.at(7 - i, j));
    }
}

TEST(Patch, PlacementsStayInsideImage) {
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    const auto p = sample_placement(rng, 16, 12, 0.4, 20.0 * std::numbers::pi / 180);
    EXPECT_DOUBLE_EQ(p.diameter, 0.4 * 12);
    EXPECT_GE(p.a - p.diameter / 2, 0.0);
    EXPECT_LE(p.a + p.diameter / 2, 12.0);
    EXPECT_GE(p.b - p.diameter / 2, 0.0);
    EXPECT_LE(p.b + p.diameter / 2, 16.0);
    EXPECT_LE(std::abs(p.theta), 20.0 * std::numbers::pi / 180);
    EXPECT_NO_THROW(overlay_taps(16, 12, 8, p));
  }
  PatchPlacement out{1.0, 8.0, 4.0, 0.0};
  EXPECT_THROW(overlay_taps(16, 16, 8, out), std::out_of_range);
}

TEST(Patch, UnrotatedUnitScaleOverlayCopiesPatchPixels) {
  // Placed at integer offset with diameter P and no rotation, the inverse map
  // lands on patch pixel centres, so the overlay copies pixels verbatim.
  const Index P = 6;
  Tensor<double> xi({1, P, P});
  for (Index i = 0; i < xi.size(); ++i) xi[i] = static_cast<double>(i) / 40.0;
  Tensor<double> img = Tensor<double>::constant({1, 10, 10}, 0.9);
  const PatchPlacement pl{5.0, 4.0, static_cast<double>(P), 0.0};
  const auto out = apply_patch(img, xi, pl);
  const auto mask = disc_mask<double>(P);
  for (Index y = 0; y < 10; ++y)
    for (Index x = 0; x < 10; ++x) {
      const Index py = y - 1, px = x - 2;
      const bool inside = py >= 0 && py < P && px >= 0 && px < P && mask.at(py, px) == 1;
      EXPECT_NEAR(out.at(0, y, x), inside ? xi.at(0, py, px) : 0.9, 1e-12) << y << "," << x;
    }
}

TEST(Patch, RotationPreservesCoveredArea) {
  const auto flat = overlay_taps(32, 32, 16, {16, 16, 12, 0.0}).size();
  const auto turned = overlay_taps(32, 32, 16, {16, 16, 12, 0.3}).size();
  EXPECT_NEAR(static_cast<double>(turned), static_cast<double>(flat), 0.05 * static_cast<double>(flat));
  // Disc area π(d/2)² in pixels.
  EXPECT_NEAR(static_cast<double>(flat), std::numbers::pi * 36, 0.1 * std::numbers::pi * 36);
}

TEST(Patch, PixelsMustStayInUnitRange) {
  EXPECT_THROW(PerturbationSpec<double>::patch(Tensor<double>::constant({3, 4, 4}, 1.5), 0.4, 0.1), std::invalid_argument);
  auto spec = PerturbationSpec<double>::gray_patch(3, 4, 0.4, 0.1);
  EXPECT_THROW(spec.set_xi(Tensor<double>::constant({3, 4, 4}, -0.1)), std::invalid_argument);
  EXPECT_THROW(spec.set_xi(Tensor<double>::constant({3, 5, 5}, 0.1)), ShapeError);
}

TEST(View, MaterializeIsAPureFunctionOfSeedDrawAndIndex) {
  const auto ds = make_synthetic<float>(3, 4, 16, 0);
  auto spec = std::make_shared<const PerturbationSpec<float>>(PerturbationSpec<float>::gray_patch(3, 8, 0.4, 0.3));
  PerturbedView<float> v(ds, spec, 11), w(ds, spec, 12);
  const std::vector<Index> idx{0, 7, 3};
  EXPECT_EQ(materialize(v, idx, 2), materialize(v, idx, 2));
  EXPECT_FALSE(materialize(v, idx, 2) == materialize(v, idx, 3));
  EXPECT_FALSE(materialize(v, idx, 2) == materialize(w, idx, 2));
  // Sample order does not change a sample's placement.
  const std::vector<Index> one{7};
  EXPECT_EQ(materialize(v, one, 2).values().segment(0, ds.image_size()).matrix(),
            materialize(v, idx, 2).values().segment(ds.image_size(), ds.image_size()).matrix());
  EXPECT_TRUE(v.same_effect(v));
  EXPECT_FALSE(v.same_effect(w));
}

TEST(View, CleanViewsShareEffect) {
  const auto ds = make_synthetic<float>(3, 4, 16, 0);
  auto zero = std::make_shared<const PerturbationSpec<float>>(PerturbationSpec<float>::zero_universal(ds.image_shape(), 0.1));
  PerturbedView<float> clean(ds), zeroed(ds, zero, 5);
  EXPECT_TRUE(clean.same_effect(zeroed));
  const std::vector<Index> idx{1, 2};
  EXPECT_EQ(materialize(clean, idx), ds.gather(idx));
  EXPECT_EQ(materialize(zeroed, idx), ds.gather(idx));
}

TEST(View, StorageDoesNotGrowWithDatasetSize) {
  const auto small = make_synthetic<float>(2, 2, 16, 0);
  const auto large = make_synthetic<float>(2, 200, 16, 0);
  auto spec = std::make_shared<const PerturbationSpec<float>>(PerturbationSpec<float>::zero_universal(small.image_shape(), 0.1));
  EXPECT_EQ(PerturbedView<float>(small, spec, 1).storage_bytes(), PerturbedView<float>(large, spec, 1).storage_bytes());
}

TEST(BatchSampler, CoversEveryIndexOncePerEpoch) {
  BatchSampler s(10, 3);
  std::vector<Index> seen;
  for (int i = 0; i < 5; ++i) {
    auto b = s.next(2);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  for (Index i = 0; i < 10; ++i) EXPECT_EQ(seen[static_cast<std::size_t>(i)], i);
  EXPECT_EQ(s.epoch(), 1);
  s.next(3);
  EXPECT_EQ(s.epoch(), 2);
  EXPECT_THROW(s.next(11), std::invalid_argument);
}

TEST(Ppm, WritesHeaderAndScaledPixels) {
  const auto dir = test::scratch_dir("ppm");
  Tensor<float> xi({3, 1, 2}, {-0.1f, 0.1f, 0.0f, 0.0f, 0.05f, -0.05f});
  write_ppm(dir + "/u.ppm", PerturbationSpec<float>::universal(xi, 0.1));
  const auto bytes = read_bytes(dir + "/u.ppm");
  const std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  // (v+ε)/(2ε)·255 for pixel 0: R=-ε→0, G=0→128, B=0.05→191.
  EXPECT_EQ(bytes[header.size() + 0], 0);
  EXPECT_EQ(bytes[header.size() + 1], 128);
  EXPECT_EQ(bytes[header.size() + 2], 191);
}
