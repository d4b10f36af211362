#include <doctest.h>

#include <cmath>
#include <regex>

#include "test_support.hpp"
#include "wkcl/bundle.hpp"
#include "wkcl/error.hpp"
#include "wkcl/task_stream.hpp"

using namespace wkcl;
using wkcl::testing::read_file;
using wkcl::testing::TempDir;
using wkcl::testing::write_file;
namespace fs = std::filesystem;

namespace {

EmbeddingBundle random_image_bundle(Rng& rng, std::int64_t count, int views, int dim, int classes) {
  EmbeddingBundle b;
  b.manifest.kind = BundleKind::Image;
  b.manifest.dim = dim;
  b.manifest.count = count;
  b.manifest.views = views;
  b.manifest.has_labels = classes > 0;
  for (int c = 0; c < classes; ++c) b.manifest.class_names.push_back("c" + std::to_string(c));
  for (std::int64_t i = 0; i < count * views * dim; ++i) b.data.push_back(static_cast<float>(rng.normal()));
  if (classes > 0) {
    for (std::int64_t i = 0; i < count; ++i) b.labels.push_back(static_cast<std::int32_t>(rng.below(classes)));
  }
  return b;
}

ErrorKind read_error(const fs::path& dir) {
  try {
    read_bundle(dir);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("bundle was accepted");
  return ErrorKind::ConfigError;
}

void check_same(const EmbeddingBundle& a, const EmbeddingBundle& b) {
  CHECK(a.manifest.kind == b.manifest.kind);
  CHECK(a.manifest.dim == b.manifest.dim);
  CHECK(a.manifest.count == b.manifest.count);
  CHECK(a.manifest.width() == b.manifest.width());
  CHECK(a.manifest.has_labels == b.manifest.has_labels);
  CHECK(a.manifest.class_names == b.manifest.class_names);
  REQUIRE(a.data.size() == b.data.size());
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  CHECK(a.labels == b.labels);
}

}  // namespace

TEST_CASE("image bundle round trip is bit-identical") {
  Rng rng(1);
  TempDir dir;
  const EmbeddingBundle b = random_image_bundle(rng, 10, 2, 8, 3);
  write_bundle(b, dir.path());
  check_same(b, read_bundle(dir.path()));
  CHECK(fs::file_size(dir / "embeddings.bin") == 10 * 2 * 8 * 4);
  CHECK(fs::file_size(dir / "labels.bin") == 10 * 4);
}

TEST_CASE("round trip over random shapes and kinds") {
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    TempDir dir;
    EmbeddingBundle b;
    const int kind = trial % 3;
    if (kind == 0) {
      b = random_image_bundle(rng, static_cast<std::int64_t>(rng.below(12)), 1 + static_cast<int>(rng.below(3)),
                              1 + static_cast<int>(rng.below(16)), static_cast<int>(rng.below(4)));
    } else {
      const int classes = static_cast<int>(rng.below(6));
      b.manifest.kind = kind == 1 ? BundleKind::TextClass : BundleKind::TextDescription;
      b.manifest.dim = 1 + static_cast<int>(rng.below(16));
      b.manifest.count = classes;
      b.manifest.descriptions = kind == 2 ? 1 + static_cast<int>(rng.below(4)) : 1;
      for (int c = 0; c < classes; ++c) b.manifest.class_names.push_back("name " + std::to_string(c));
      for (std::uint64_t i = 0; i < b.manifest.payload_bytes() / 4; ++i) {
        b.data.push_back(static_cast<float>(rng.normal()));
      }
    }
    // Exercise subnormals, signed zero and extremes as well.
    if (!b.data.empty()) {
      b.data[0] = -0.0f;
      b.data.back() = std::numeric_limits<float>::denorm_min();
    }
    write_bundle(b, dir.path());
    check_same(b, read_bundle(dir.path()));
  }
}

TEST_CASE("empty bundle writes empty payloads") {
  Rng rng(3);
  TempDir dir;
  const EmbeddingBundle b = random_image_bundle(rng, 0, 2, 4, 2);
  write_bundle(b, dir.path());
  CHECK(fs::file_size(dir / "embeddings.bin") == 0);
  CHECK(fs::file_size(dir / "labels.bin") == 0);
  CHECK(read_bundle(dir.path()).count() == 0);
}

TEST_CASE("payload size follows the format definition") {
  Rng rng(4);
  TempDir dir;
  write_bundle(random_image_bundle(rng, 3, 2, 64, 0), dir.path());
  CHECK(fs::file_size(dir / "embeddings.bin") == 1536);
  CHECK_FALSE(fs::exists(dir / "labels.bin"));
}

TEST_CASE("little-endian float payload") {
  TempDir dir;
  EmbeddingBundle b;
  b.manifest.dim = 1;
  b.manifest.count = 1;
  b.data = {1.0f};
  write_bundle(b, dir.path());
  const std::string bytes = read_file(dir / "embeddings.bin");
  REQUIRE(bytes.size() == 4);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[1]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[2]) == 0x80);
  CHECK(static_cast<unsigned char>(bytes[3]) == 0x3f);
}

TEST_CASE("read_bundle rejects damaged bundles with typed errors") {
  Rng rng(5);
  const EmbeddingBundle b = random_image_bundle(rng, 6, 2, 4, 3);

  SUBCASE("truncated payload") {
    TempDir dir;
    write_bundle(b, dir.path());
    std::string bytes = read_file(dir / "embeddings.bin");
    bytes.resize(bytes.size() - 4);
    write_file(dir / "embeddings.bin", bytes);
    CHECK(read_error(dir.path()) == ErrorKind::SizeMismatch);
  }
  SUBCASE("label equal to the class count") {
    TempDir dir;
    write_bundle(b, dir.path());
    std::string bytes = read_file(dir / "labels.bin");
    bytes[0] = 3;
    bytes[1] = bytes[2] = bytes[3] = 0;
    write_file(dir / "labels.bin", bytes);
    CHECK(read_error(dir.path()) == ErrorKind::LabelOutOfRange);
  }
  SUBCASE("negative label") {
    TempDir dir;
    write_bundle(b, dir.path());
    std::string bytes = read_file(dir / "labels.bin");
    bytes[0] = bytes[1] = bytes[2] = bytes[3] = static_cast<char>(0xff);
    write_file(dir / "labels.bin", bytes);
    CHECK(read_error(dir.path()) == ErrorKind::LabelOutOfRange);
  }
  SUBCASE("NaN in the payload") {
    TempDir dir;
    write_bundle(b, dir.path());
    std::string bytes = read_file(dir / "embeddings.bin");
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + 8, &nan, 4);
    write_file(dir / "embeddings.bin", bytes);
    CHECK(read_error(dir.path()) == ErrorKind::NonFiniteEntry);
  }
  SUBCASE("version 2") {
    TempDir dir;
    write_bundle(b, dir.path());
    std::string text = read_file(dir / "manifest.json");
    text = std::regex_replace(text, std::regex("\"version\": 1"), "\"version\": 2");
    write_file(dir / "manifest.json", text);
    CHECK(read_error(dir.path()) == ErrorKind::BadVersion);
  }
  SUBCASE("labels declared absent but present on disk") {
    TempDir dir;
    write_bundle(b, dir.path());
    std::string text = read_file(dir / "manifest.json");
    text = std::regex_replace(text, std::regex("\"present\""), "\"absent\"");
    write_file(dir / "manifest.json", text);
    CHECK(read_error(dir.path()) == ErrorKind::InvariantViolation);
  }
  SUBCASE("missing directory") {
    CHECK(read_error("/nonexistent/wkcl/bundle") == ErrorKind::IoError);
  }
}

TEST_CASE("write_bundle validates before writing") {
  Rng rng(6);
  TempDir dir;
  EmbeddingBundle b = random_image_bundle(rng, 4, 1, 3, 2);
  b.data[5] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(write_bundle(b, dir / "bad"), Error);
  CHECK_FALSE(fs::exists(dir / "bad" / "manifest.json"));

  EmbeddingBundle dup = random_image_bundle(rng, 4, 1, 3, 2);
  dup.manifest.class_names = {"a", "a"};
  CHECK_THROWS_AS(write_bundle(dup, dir / "dup"), Error);
}

TEST_CASE("every single-byte corruption of a numeric manifest field is a typed error") {
  Rng rng(7);
  TempDir dir;
  write_bundle(random_image_bundle(rng, 10, 2, 8, 3), dir.path());
  const std::string original = read_file(dir / "manifest.json");

  // Byte ranges of the values of version, dim, count and views.
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const char* key : {"\"version\": ", "\"dim\": ", "\"count\": ", "\"views\": "}) {
    const std::size_t at = original.find(key);
    REQUIRE(at != std::string::npos);
    std::size_t begin = at + std::strlen(key), end = begin;
    while (end < original.size() && original[end] != ',' && original[end] != '\n') ++end;
    spans.emplace_back(begin, end);
  }

  int corruptions = 0;
  for (const auto& [begin, end] : spans) {
    for (std::size_t pos = begin; pos < end; ++pos) {
      for (int value = 0; value < 256; ++value) {
        if (static_cast<char>(value) == original[pos]) continue;
        std::string text = original;
        text[pos] = static_cast<char>(value);
        write_file(dir / "manifest.json", text);
        bool typed = false;
        try {
          read_bundle(dir.path());
        } catch (const Error&) {
          typed = true;
        } catch (...) {
        }
        CHECK_MESSAGE(typed, "byte " << pos << " -> " << value);
        ++corruptions;
      }
    }
  }
  CHECK(corruptions > 1000);
  write_file(dir / "manifest.json", original);
  CHECK_NOTHROW(read_bundle(dir.path()));
}

TEST_CASE("bundle accessors") {
  Rng rng(8);
  const EmbeddingBundle b = random_image_bundle(rng, 5, 2, 3, 2);
  CHECK(b.vector(4, 1)[2] == b.data[(4 * 2 + 1) * 3 + 2]);
  const MatF g = b.gather({3, 0}, 1);
  CHECK(g(0, 0) == b.vector(3, 1)[0]);
  CHECK(g(1, 2) == b.vector(0, 1)[2]);
  CHECK_THROWS_AS(b.vector(5, 0), Error);
  CHECK_THROWS_AS(b.vector(0, 2), Error);
  CHECK(b.slot_matrix(0).rows() == 5);
}

TEST_CASE("task stream construction and validation") {
  std::vector<std::int32_t> labels;
  for (int c = 0; c < 12; ++c) {
    for (int i = 0; i < 8; ++i) labels.push_back(c);
  }
  const TaskStream s = make_task_stream(labels, 12, 5, 0.25, 42);
  REQUIRE(s.num_tasks() == 5);
  // 12 classes over 5 tasks: the remainder goes to the earliest tasks.
  CHECK(s.tasks[0].classes.size() == 3);
  CHECK(s.tasks[1].classes.size() == 3);
  CHECK(s.tasks[2].classes.size() == 2);
  CHECK(s.tasks[4].classes.size() == 2);
  CHECK_NOTHROW(s.validate(static_cast<std::int64_t>(labels.size()), labels));
  CHECK(s.tasks[0].test_ids.size() == 3 * 2);
  CHECK(s.classes_through(1).size() == 6);

  TempDir dir;
  write_task_stream(s, dir / "stream.json");
  const TaskStream back = read_task_stream(dir / "stream.json");
  CHECK(back.num_classes == 12);
  for (int t = 0; t < 5; ++t) {
    CHECK(back.tasks[t].classes == s.tasks[t].classes);
    CHECK(back.tasks[t].train_ids == s.tasks[t].train_ids);
    CHECK(back.tasks[t].test_ids == s.tasks[t].test_ids);
  }

  TaskStream overlap = s;
  overlap.tasks[1].test_ids.push_back(overlap.tasks[1].train_ids[0]);
  CHECK_THROWS_AS(overlap.validate(static_cast<std::int64_t>(labels.size()), labels), Error);
  TaskStream shared = s;
  shared.tasks[1].classes.push_back(shared.tasks[0].classes[0]);
  CHECK_THROWS_AS(shared.validate(static_cast<std::int64_t>(labels.size()), labels), Error);
  CHECK_THROWS_AS(make_task_stream(labels, 12, 13, 0.25, 42), Error);
}
