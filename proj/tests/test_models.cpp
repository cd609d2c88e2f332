#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace fzt;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fuzztune_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ErrorCode decode_error(std::vector<unsigned char> bytes) {
  try {
    decode_checkpoint(std::move(bytes));
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode accepted corrupt bytes";
  return ErrorCode::InvalidArgument;
}

// Points on either side of a random hyperplane through the cube centre,
// with a margin band removed.
Dataset separable_set(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(d);
  for (auto& v : w) v = rng.uniform(-1, 1);
  Dataset ds;
  ds.class_count = 2;
  while (ds.examples.size() < n) {
    std::vector<double> x(d);
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = rng.uniform01();
      s += w[i] * (x[i] - 0.5);
    }
    if (std::abs(s) < 0.15) continue;
    ds.examples.push_back({Tensor(std::move(x)), s > 0 ? 1u : 0u});
  }
  return ds;
}

// Rosenblatt perceptron; returns the number of training errors after
// convergence or the epoch cap.
std::size_t perceptron_errors(const Dataset& ds, std::size_t max_epochs) {
  const auto d = ds.input_dim();
  std::vector<double> w(d + 1, 0.0);
  auto score = [&](const Tensor& x) {
    double s = w[d];
    for (std::size_t i = 0; i < d; ++i) s += w[i] * x[i];
    return s;
  };
  std::size_t errors = 0;
  for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
    errors = 0;
    for (const auto& ex : ds.examples) {
      const double t = ex.y == 1 ? 1.0 : -1.0;
      if (t * score(ex.x) <= 0.0) {
        ++errors;
        for (std::size_t i = 0; i < d; ++i) w[i] += t * ex.x[i];
        w[d] += t;
      }
    }
    if (errors == 0) break;
  }
  return errors;
}

}  // namespace

TEST(BuildModel, DeterministicAndSeedSensitive) {
  const ArchSpec a{256, 5, ArchKind::Residual, {64}, 2, 1};
  EXPECT_EQ(encode_checkpoint(build_model(a)), encode_checkpoint(build_model(a)));
  ArchSpec b = a;
  b.seed = 2;
  EXPECT_NE(build_model(a).parameter("stem.weight"), build_model(b).parameter("stem.weight"));
}

TEST(BuildModel, ParametersFiniteAndWithinGlorotBound) {
  const Model m = build_model({30, 4, ArchKind::Plain, {20, 10}, 0, 3});
  for (const auto& p : m.parameters()) {
    EXPECT_TRUE(p.tensor->all_finite());
    if (p.tensor->rank() == 2) {
      const auto fan = p.tensor->shape()[0] + p.tensor->shape()[1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan));
      for (double v : p.tensor->values()) EXPECT_LE(std::abs(v), limit);
    } else {
      for (double v : p.tensor->values()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(BuildModel, ParameterCountMatchesHandCount) {
  const std::size_t d = 256, w = 64, C = 5;
  const Model res = build_model({d, C, ArchKind::Residual, {w}, 2, 7});
  // stem + 2 blocks of two w x w affines + head
  EXPECT_EQ(res.parameter_count(), (d * w + w) + 2 * 2 * (w * w + w) + (w * C + C));
  const Model plain = build_model({d, C, ArchKind::Plain, {128, 64}, 0, 7});
  EXPECT_EQ(plain.parameter_count(), (d * 128 + 128) + (128 * 64 + 64) + (64 * C + C));
}

TEST(BuildModel, RejectsInvalidArch) {
  EXPECT_THROW(build_model({10, 1, ArchKind::Plain, {}, 0, 1}), Error);
  EXPECT_THROW(build_model({10, 3, ArchKind::Plain, {0}, 0, 1}), Error);
  EXPECT_THROW(build_model({10, 3, ArchKind::Plain, {4}, 1, 1}), Error);
  EXPECT_THROW(build_model({10, 3, ArchKind::Residual, {4, 4}, 1, 1}), Error);
  EXPECT_THROW(build_model({10, 3, ArchKind::Residual, {4}, 0, 1}), Error);
}

TEST(BuildModel, TapLayout) {
  const Model res = build_model({10, 3, ArchKind::Residual, {8}, 3, 1});
  EXPECT_EQ(res.tap_count(), 6u);
  EXPECT_EQ(res.default_feature_tap(), 3u);
  EXPECT_EQ(res.tap_dim(0), 10u);
  EXPECT_EQ(res.tap_dim(3), 8u);
  EXPECT_EQ(res.tap_dim(5), 3u);
  const Model plain = build_model({10, 3, ArchKind::Plain, {8, 6, 4}, 0, 1});
  EXPECT_EQ(plain.default_feature_tap(), 2u);
}

TEST(Train, ZeroEpochsIsNoOp) {
  const Model m = build_model({64, 5, ArchKind::Residual, {16}, 1, 3});
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train(m, fzt::testing::small_synthetic(5, 1), cfg);
  EXPECT_EQ(encode_checkpoint(r.model), encode_checkpoint(m));
  EXPECT_TRUE(r.history.epochs.empty());
}

TEST(Train, SeparableSetReachesNearPerfectAccuracy) {
  const auto ds = separable_set(300, 10, 17);
  ASSERT_EQ(perceptron_errors(ds, 1000), 0u) << "oracle: set is not linearly separable";
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 3;
  const auto r = train(build_model({10, 2, ArchKind::Plain, {16}, 0, 4}), ds, cfg);
  ASSERT_EQ(r.history.epochs.size(), 50u);
  EXPECT_GE(r.history.epochs.back().train_accuracy, 0.99);
  EXPECT_DOUBLE_EQ(r.history.epochs.back().train_accuracy, accuracy(r.model, ds));
}

TEST(Train, Deterministic) {
  const auto ds = fzt::testing::small_synthetic(20, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  const ArchSpec a{64, 5, ArchKind::Residual, {16}, 2, 5};
  EXPECT_EQ(encode_checkpoint(train(build_model(a), ds, cfg).model),
            encode_checkpoint(train(build_model(a), ds, cfg).model));
}

TEST(Train, RejectsBadLabelsBeforeTraining) {
  auto ds = fzt::testing::small_synthetic(3, 2);
  ds.examples[4].y = 7;
  ds.class_count = 8;
  try {
    train(build_model({64, 5, ArchKind::Plain, {8}, 0, 1}), ds, {});
    FAIL() << "out-of-range label accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
  }
}

TEST(Predict, AuditMatchesStoredPredictions) {
  const auto ds = fzt::testing::small_synthetic(20, 2);
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto r = train(build_model({64, 5, ArchKind::Plain, {16}, 0, 2}), ds, cfg);
  ASSERT_EQ(r.history.prediction_audit.size(), 16u);
  for (const auto& [idx, cls] : r.history.prediction_audit) EXPECT_EQ(predict(r.model, ds.examples[idx].x), cls);
}

TEST(Checkpoint, RoundTripIsExact) {
  const Model m = fzt::testing::trained_residual();
  const auto path = temp_path("roundtrip.fztm").string();
  save_checkpoint(m, path);
  const Model back = load_checkpoint(path);
  EXPECT_EQ(back.arch(), m.arch());
  for (const auto& p : m.parameters()) EXPECT_EQ(back.parameter(p.name), *p.tensor);
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const auto x = fzt::testing::random_input(rng, 64);
    ASSERT_EQ(forward(back, x).output, forward(m, x).output);
    ASSERT_EQ(predict(back, x), predict(m, x));
  }
}

TEST(Checkpoint, HeaderLayout) {
  const Model m = build_model({4, 2, ArchKind::Plain, {}, 0, 1});
  const auto bytes = encode_checkpoint(m);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FZTM");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  const std::size_t len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (static_cast<std::size_t>(bytes[11]) << 24);
  EXPECT_EQ(std::string(bytes.begin() + 12, bytes.begin() + 12 + len), canonical_json(m.arch()));
  // head.weight (2x4) + head.bias (2), 8 bytes per value, plus per-parameter headers
  const std::size_t headers = (2 + 11 + 1 + 8) + (2 + 9 + 1 + 4);
  EXPECT_EQ(bytes.size(), 12 + len + 4 + headers + 10 * 8);
}

TEST(Checkpoint, DistinctErrorCodes) {
  const auto good = encode_checkpoint(build_model({6, 3, ArchKind::Residual, {4}, 1, 2}));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(decode_error(bad_magic), ErrorCode::BadMagic);

  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(decode_error(bad_version), ErrorCode::VersionMismatch);

  auto truncated = good;
  truncated.resize(good.size() - 20);
  EXPECT_EQ(decode_error(truncated), ErrorCode::TruncatedPayload);

  std::string text(good.begin(), good.end());
  const auto pos = text.find("\"class_count\":3");
  ASSERT_NE(pos, std::string::npos);
  auto wrong_arch = good;
  wrong_arch[pos + 14] = '4';
  EXPECT_EQ(decode_error(wrong_arch), ErrorCode::ArchMismatch);

  try {
    load_checkpoint(temp_path("does_not_exist.fztm").string());
    FAIL() << "missing file accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
}
