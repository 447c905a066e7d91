#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pda/metrics.hpp"
#include "pda/train.hpp"

using namespace pda;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pdalab_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> idx_header(unsigned char dtype, std::vector<std::uint32_t> dims) {
  std::vector<unsigned char> b{0, 0, dtype, static_cast<unsigned char>(dims.size())};
  for (std::uint32_t d : dims)
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(d >> s));
  return b;
}

}  // namespace

// ---- blobs -----------------------------------------------------------------

TEST(GenBlobs, DeterministicAndBalanced) {
  EXPECT_EQ(gen_blobs(101, 3, 2, 4.0, 1).images, gen_blobs(101, 3, 2, 4.0, 1).images);
  EXPECT_NE(gen_blobs(101, 3, 2, 4.0, 1).images, gen_blobs(101, 3, 2, 4.0, 2).images);
  const Dataset ds = gen_blobs(101, 3, 2, 4.0, 1);
  EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 0u), 51);
  EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 1u), 50);
  for (double v : ds.images.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(GenBlobs, SeparableLimitIsLearnedByLinearModel) {
  const Dataset ds = gen_blobs(200, 2, 2, 100.0, 3);
  Model m = build_model("linear", {2}, 2, 1);
  TrainPlan p;
  p.epochs = 20;
  p.batch_size = 16;
  p.learning_rate = 0.5;
  train(m, ds, p);
  EXPECT_EQ(error_rate(m, ds), 0.0);
}

TEST(GenBlobs, Errors) {
  EXPECT_THROW(gen_blobs(1, 2, 2, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(gen_blobs(10, 0, 2, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(gen_blobs(10, 2, 1, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(gen_blobs(10, 2, 2, 0.0, 0), std::invalid_argument);
}

// ---- shapes ----------------------------------------------------------------

TEST(RenderShape, SquareMatchesHandMask) {
  const auto mask = render_shape(ShapeKind::square, 4.0, 4.0, 2.0, 8);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      const bool inside = r >= 2 && r <= 5 && c >= 2 && c <= 5;
      EXPECT_EQ(mask[r * 8 + c], inside ? 1.0 : 0.0) << r << "," << c;
    }
}

TEST(RenderShape, CircleAndCrossSpotChecks) {
  const auto circle = render_shape(ShapeKind::circle, 5.0, 5.0, 3.0, 10);
  EXPECT_EQ(circle[4 * 10 + 4], 1.0);  // centre pixel
  EXPECT_EQ(circle[2 * 10 + 4], 1.0);  // (4.5, 2.5): distance 2.55
  EXPECT_EQ(circle[2 * 10 + 2], 0.0);  // corner of the bounding box
  const auto cross = render_shape(ShapeKind::cross, 5.0, 5.0, 3.0, 10);
  EXPECT_EQ(cross[2 * 10 + 4], 1.0);
  EXPECT_EQ(cross[2 * 10 + 2], 0.0);
}

TEST(GenShapes, RangeBalanceAndDeterminism) {
  const Dataset ds = gen_shapes(40, 12, 3);
  EXPECT_EQ(ds.images.shape(), (Shape{40, 1, 12, 12}));
  EXPECT_EQ(ds.num_classes, 4u);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), c), 10);
  for (double v : ds.images.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  EXPECT_EQ(ds.images, gen_shapes(40, 12, 3).images);
  EXPECT_THROW(gen_shapes(4, 7, 0), std::invalid_argument);
}

TEST(GenShapes, NaturalCnnReachesNinetyFivePercent) {
  const Dataset train_set = gen_shapes(2000, 16, 1), test_set = gen_shapes(500, 16, 2);
  Model m = build_model("cnn_small", {1, 16, 16}, 4, 7);
  TrainPlan p;
  p.epochs = 30;
  p.batch_size = 32;
  p.learning_rate = 0.01;
  p.momentum = 0.9;
  p.seed = 3;
  p.track_clean = false;
  train(m, train_set, p);
  EXPECT_GE(1.0 - error_rate(m, test_set), 0.95);
}

// ---- IDX -------------------------------------------------------------------

TEST(Idx, RoundTripOfRandomBytes) {
  Rng rng(1);
  std::vector<std::uint8_t> payload(3 * 5 * 7);
  for (auto& b : payload) b = static_cast<std::uint8_t>(rng.index(256));
  const auto path = scratch("rt.idx");
  write_idx(path, Shape{3, 5, 7}, payload);
  const Tensor raw = read_idx(path, false);
  const Tensor scaled = read_idx(path);
  ASSERT_EQ(raw.shape(), (Shape{3, 5, 7}));
  for (std::size_t i = 0; i < payload.size(); ++i) {
    EXPECT_EQ(raw[i], payload[i]);
    EXPECT_EQ(std::lround(scaled[i] * 255.0), payload[i]);
  }
  write_idx(path, scaled);
  EXPECT_EQ(read_idx(path, false), raw);
}

TEST(Idx, HandBuiltTwoImageFixture) {
  auto images = idx_header(0x08, {2, 28, 28});
  ASSERT_EQ(images[3], 3);  // magic 0x00000803
  for (int i = 0; i < 2 * 28 * 28; ++i) images.push_back(static_cast<unsigned char>(i % 256));
  auto labels = idx_header(0x08, {2});
  labels.push_back(7);
  labels.push_back(3);
  write_bytes(scratch("img.idx"), images);
  write_bytes(scratch("lbl.idx"), labels);
  const Tensor t = read_idx(scratch("img.idx"));
  EXPECT_EQ(t.shape(), (Shape{2, 28, 28}));
  EXPECT_EQ(t[255], 1.0);
  EXPECT_EQ(t[28 * 28 + 1], static_cast<double>((28 * 28 + 1) % 256) / 255.0);
  const Dataset ds = load_idx(scratch("img.idx"), scratch("lbl.idx"));
  EXPECT_EQ(ds.images.shape(), (Shape{2, 1, 28, 28}));
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{7, 3}));
  EXPECT_EQ(ds.num_classes, 8u);
}

TEST(Idx, TruncatedFileNamesByteCounts) {
  auto bytes = idx_header(0x08, {2, 28, 28});
  bytes.resize(bytes.size() + 2 * 28 * 28 - 1, 0);
  write_bytes(scratch("short.idx"), bytes);
  try {
    read_idx(scratch("short.idx"));
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 1584 bytes, got 1583"), std::string::npos) << e.what();
  }
}

TEST(Idx, BadMagicAndDtype) {
  write_bytes(scratch("magic.idx"), {1, 0, 8, 1, 0, 0, 0, 1, 5});
  EXPECT_THROW(read_idx(scratch("magic.idx")), FormatError);
  auto f32 = idx_header(0x0D, {1});
  f32.insert(f32.end(), 4, 0);
  write_bytes(scratch("f32.idx"), f32);
  EXPECT_THROW(read_idx(scratch("f32.idx")), FormatError);
  EXPECT_THROW(read_idx(scratch("missing.idx")), std::runtime_error);
}

// ---- native dataset file and references ------------------------------------

TEST(DatasetFile, RoundTrip) {
  const Dataset ds = gen_shapes(9, 8, 4);
  save_dataset(scratch("ds.bin"), ds);
  const Dataset back = load_dataset(scratch("ds.bin"));
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_classes, 4u);
  EXPECT_EQ(file_checksum(scratch("ds.bin")), file_checksum(scratch("ds.bin")));
}

TEST(DatasetFile, RejectsForeignFiles) {
  write_bytes(scratch("junk.bin"), {'N', 'O', 'P', 'E', 0, 0});
  EXPECT_THROW(load_dataset(scratch("junk.bin")), FormatError);
}

TEST(DatasetValidate, EnforcesInvariants) {
  Dataset ds = gen_blobs(4, 2, 2, 3.0, 1);
  ds.labels[0] = 5;
  EXPECT_THROW(ds.validate(), std::out_of_range);
  ds = gen_blobs(4, 2, 2, 3.0, 1);
  ds.images.mutable_data()[0] = 1.5;
  EXPECT_THROW(ds.validate(), std::out_of_range);
  ds = gen_blobs(4, 2, 2, 3.0, 1);
  ds.labels.pop_back();
  EXPECT_THROW(ds.validate(), ShapeError);
}

TEST(OpenDataset, GeneratorReferences) {
  EXPECT_EQ(open_dataset("shapes:n=8,size=8,seed=1").images, gen_shapes(8, 8, 1).images);
  EXPECT_EQ(open_dataset("blobs:n=10,d=3,classes=2,sep=4,seed=2").images, gen_blobs(10, 3, 2, 4.0, 2).images);
  EXPECT_THROW(open_dataset("shapes:n=8,colour=red"), std::invalid_argument);
  EXPECT_THROW(open_dataset("shapes:n8"), std::invalid_argument);
  EXPECT_THROW(open_dataset("/nonexistent/data.bin"), std::runtime_error);
}

TEST(DatasetSlicing, SubsetAndHead) {
  const Dataset ds = gen_blobs(6, 2, 3, 3.0, 1);
  const std::vector<std::size_t> idx{4, 1};
  const Dataset s = ds.subset(idx);
  EXPECT_EQ(s.labels, (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(s.images.rows(0, 1), ds.images.rows(4, 5));
  EXPECT_EQ(ds.head(10).size(), 6u);
  EXPECT_EQ(ds.head(2).images, ds.images.rows(0, 2));
}
