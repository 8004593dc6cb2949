#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pcaae/checkpoint.hpp"

using namespace pcaae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "pcaae_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Checkpoint, RoundTripsEveryDtype) {
  Checkpoint ck;
  ck.put("w", Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6.5f}));
  ck.put("d", Tensor<double>({1}, std::vector<double>{-0.125}));
  ck.put_int("meta.step", 42);
  const auto path = scratch("rt.ckpt").string();
  ck.save(path);

  auto back = Checkpoint::load(path);
  EXPECT_EQ(back.get<float>("w"), ck.get<float>("w"));
  EXPECT_EQ(back.get<double>("d").item(), -0.125);
  EXPECT_EQ(back.get_int("meta.step"), 42);
  ASSERT_EQ(back.arrays().size(), 3u);
  EXPECT_EQ(back.arrays()[0].name, "w");
  EXPECT_EQ(back.arrays()[2].name, "meta.step");
}

TEST(Checkpoint, ResavingLoadedFileReproducesBytes) {
  Checkpoint ck;
  ck.put("b", Tensor<float>({4}, 0.25f));
  ck.put("a", Tensor<double>({2, 2}, 3.0));
  const auto first = scratch("a.ckpt"), second = scratch("b.ckpt");
  ck.save(first.string());
  Checkpoint::load(first.string()).save(second.string());
  EXPECT_EQ(slurp(first), slurp(second));
}

TEST(Checkpoint, OverwritingNameKeepsPosition) {
  Checkpoint ck;
  ck.put_int("x", 1);
  ck.put_int("y", 2);
  ck.put_int("x", 3);
  ASSERT_EQ(ck.arrays().size(), 2u);
  EXPECT_EQ(ck.arrays()[0].name, "x");
  EXPECT_EQ(ck.get_int("x"), 3);
}

TEST(Checkpoint, Errors) {
  Checkpoint ck;
  ck.put("w", Tensor<float>({1}, 1.0f));
  EXPECT_THROW(ck.get<float>("missing"), IoError);
  EXPECT_THROW(ck.get<double>("w"), IoError);
  EXPECT_THROW(Checkpoint::load(scratch("does-not-exist").string()), IoError);

  const auto junk = scratch("junk.ckpt");
  std::ofstream(junk) << "not a checkpoint";
  EXPECT_THROW(Checkpoint::load(junk.string()), IoError);

  const auto good = scratch("trunc.ckpt");
  ck.save(good.string());
  auto bytes = slurp(good);
  std::ofstream(good, std::ios::binary | std::ios::trunc).write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 2));
  EXPECT_THROW(Checkpoint::load(good.string()), IoError);
}
