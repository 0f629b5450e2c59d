#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <bit>
#include <fstream>

#include "energyfc/checkpoint.hpp"
#include "energyfc/errors.hpp"
#include "test_util.hpp"

namespace energyfc {
namespace {

using test::random_params;
using test::small_config;

Checkpoint sample_checkpoint(Arch arch = Arch::kLstmp) {
  Checkpoint c;
  c.config = small_config(10, 6, 2, 50, arch);
  c.params = random_params(c.config, 3);
  c.params.layers[0].bias(1) = 0.1;  // not exactly representable
  c.params.layers[1].input_weights(0, 0) = 1e-300;
  c.norm.sum_current = {123.456, 7.89, false};
  c.norm.max_current = {1.0 / 3.0, 0.5, false};
  c.norm.transmission_rate = {5.0, 0.0, true};
  c.norm.packet_size = {2.25, 1.25, false};
  c.norm.max_nr_connections = 3.0;
  return c;
}

// Total length of every "values" array below `j`.
std::size_t count_values(const nlohmann::json& j) {
  std::size_t n = 0;
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      n += it.key() == "values" ? it.value().size() : count_values(it.value());
    }
  } else if (j.is_array()) {
    for (const auto& v : j) n += count_values(v);
  }
  return n;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  for (const Arch arch : {Arch::kLstmp, Arch::kLstmBaseline}) {
    const auto c = sample_checkpoint(arch);
    const std::string first = save_checkpoint(c);
    const std::string second = save_checkpoint(load_checkpoint(first));
    EXPECT_EQ(first, second);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto c = sample_checkpoint();
  const auto back = load_checkpoint(save_checkpoint(c));
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(fingerprint(back.params), fingerprint(c.params));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(back.norm.max_current.mean),
            std::bit_cast<std::uint64_t>(c.norm.max_current.mean));
  EXPECT_TRUE(back.norm.transmission_rate.constant);
  EXPECT_EQ(back.norm.current_transform, c.norm.current_transform);
}

TEST(Checkpoint, FiftyTwoParameterModelStoresFiftyTwoWeights) {
  Checkpoint c;
  c.config = small_config(1, 2, 1, 50);
  c.params = random_params(c.config, 1);
  const auto doc = nlohmann::json::parse(save_checkpoint(c));
  ASSERT_TRUE(doc.contains("layers"));
  EXPECT_EQ(count_values(doc), 52u);
}

TEST(Checkpoint, MissingFieldIsNamed) {
  const auto c = sample_checkpoint();
  auto doc = nlohmann::json::parse(save_checkpoint(c));
  doc["layers"][1].erase("W_hr");
  try {
    load_checkpoint(doc.dump());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(e.field().find("W_hr"), std::string::npos) << e.field();
  }
}

TEST(Checkpoint, TruncatedDocumentFails) {
  const std::string full = save_checkpoint(sample_checkpoint());
  EXPECT_THROW(load_checkpoint(full.substr(0, full.size() / 2)), LoadError);
  EXPECT_THROW(load_checkpoint(""), LoadError);
}

TEST(Checkpoint, VersionMismatchFails) {
  auto doc = nlohmann::json::parse(save_checkpoint(sample_checkpoint()));
  doc["format_version"] = kCheckpointFormatVersion + 1;
  try {
    load_checkpoint(doc.dump());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_EQ(e.field(), "format_version");
  }
}

TEST(Checkpoint, ShapeCorruptionFails) {
  auto doc = nlohmann::json::parse(save_checkpoint(sample_checkpoint()));
  doc["layers"][0]["b_i"]["values"].erase(0);
  EXPECT_THROW(load_checkpoint(doc.dump()), LoadError);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
  const auto dir = test::temp_dir("checkpoint");
  const auto c = sample_checkpoint();
  write_checkpoint_file(dir / "model.json", c);
  EXPECT_EQ(fingerprint(read_checkpoint_file(dir / "model.json").params), fingerprint(c.params));
  EXPECT_THROW(read_checkpoint_file(dir / "absent.json"), IoError);
}

}  // namespace
}  // namespace energyfc
