#include <filesystem>
#include <string>

#include "doctest.h"
#include "hbm/errors.hpp"
#include "hbm/storage.hpp"
#include "model_fixtures.hpp"

using namespace hbm;

namespace {

std::string from_hex(const std::string& hex) {
  std::string out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
    out.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  }
  return out;
}

EmbeddedDataset random_dataset(std::size_t docs, std::uint32_t dim, Rng& rng) {
  EmbeddedDataset ds;
  ds.embed_dim = dim;
  for (std::size_t i = 0; i < docs; ++i) {
    Document d;
    d.id = static_cast<std::uint32_t>(100 + i);
    d.label = static_cast<std::uint32_t>(rng.below(2));
    d.embeddings = oracle::random_mat(1 + rng.below(5), dim, rng);
    ds.documents.push_back(std::move(d));
  }
  return ds;
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "hbm_storage_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("HBE1 hand-encoded fixture") {
  // magic, version 1, d_e 2, count 1, id 7, label 1, s 1, 1.0f, 2.0f
  const std::string bytes = from_hex(
      "48424531" "01000000" "02000000" "01000000"
      "07000000" "01000000" "01000000" "0000803f" "00000040");
  const EmbeddedDataset ds = decode_dataset(bytes);
  CHECK(ds.embed_dim == 2);
  REQUIRE(ds.documents.size() == 1);
  CHECK(ds.documents[0].id == 7);
  CHECK(ds.documents[0].label == 1);
  CHECK(ds.documents[0].embeddings == Mat::from_rows({{1.0f, 2.0f}}));
  CHECK(encode_dataset(ds) == bytes);
}

TEST_CASE("HBE1 round trip and errors") {
  Rng rng(3);
  const EmbeddedDataset ds = random_dataset(6, 5, rng);
  const std::string bytes = encode_dataset(ds);
  CHECK(encode_dataset(decode_dataset(bytes)) == bytes);

  EmbeddedDataset empty;
  empty.embed_dim = 768;
  const auto empty_bytes = encode_dataset(empty);
  CHECK(empty_bytes.size() == 16);
  CHECK(decode_dataset(empty_bytes).documents.empty());

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  std::string wrong_version = bytes;
  wrong_version[4] = 2;
  CHECK_THROWS_AS(decode_dataset(wrong_version), FormatError);
  CHECK_THROWS_AS(decode_dataset(bytes.substr(0, bytes.size() - 3)), CorruptionError);
  CHECK_THROWS_AS(decode_dataset(bytes + "x"), CorruptionError);

  ModelConfig c;
  c.embed_dim = 4;
  CHECK_THROWS_AS(ds.check_compatible(c), DataError);
}

TEST_CASE("dataset files with sentence sidecar") {
  Rng rng(4);
  EmbeddedDataset ds = random_dataset(3, 4, rng);
  for (auto& d : ds.documents) {
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < d.sentence_count(); ++i) texts.push_back("sentence " + std::to_string(i) + " of " + std::to_string(d.id));
    d.sentences = texts;
  }
  const auto path = temp_dir() / "data.hbe";
  write_dataset(path, ds);
  CHECK(std::filesystem::exists(sidecar_path(path)));
  const EmbeddedDataset back = read_dataset(path);
  REQUIRE(back.documents.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.documents[i].sentences == ds.documents[i].sentences);
    CHECK(back.documents[i].embeddings == ds.documents[i].embeddings);
  }
  CHECK(read_file(path) == encode_dataset(ds));

  // Sidecar that disagrees with the matrix row count.
  write_file(sidecar_path(path), "{\"100\": [\"only one\", \"two\", \"three\", \"four\", \"five\", \"six\"]}");
  CHECK_THROWS_AS(read_dataset(path), DataError);
  std::filesystem::remove(sidecar_path(path));
}

TEST_CASE("pad_to_m") {
  Document d;
  d.embeddings = Mat::from_rows({{1, 2}, {3, 4}});
  const auto padded = pad_to_m(d, 4);
  CHECK(padded.real_rows == 2);
  CHECK(padded.values == Mat::from_rows({{1, 2}, {3, 4}, {0, 0}, {0, 0}}));
  CHECK(pad_to_m(d, 2).values == d.embeddings);

  Document longer;
  longer.embeddings = Mat::from_rows({{1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}, {6, 6}});
  const auto cut = pad_to_m(longer, 4);
  CHECK(cut.real_rows == 4);
  CHECK(cut.values == Mat::from_rows({{1, 1}, {2, 2}, {3, 3}, {4, 4}}));

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Document r;
    r.embeddings = oracle::random_mat(1 + rng.below(8), 3, rng);
    const std::size_t m = 1 + rng.below(8);
    const auto p = pad_to_m(r, m);
    for (std::size_t i = 0; i < std::min(m, r.sentence_count()); ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(p.values(i, j) == r.embeddings(i, j));
  }
}

TEST_CASE("checkpoint round trip") {
  ModelConfig c;
  c.embed_dim = 6;
  c.max_sentences = 3;
  c.layers = 4;
  c.heads = 1;
  Rng rng(6);
  Checkpoint ck{c, init_params(c, rng), {17, 0.123456789012345, 42}};
  const std::string bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes, &c);
  CHECK(back.config == c);
  CHECK(back.meta == ck.meta);
  CHECK(encode_checkpoint(back) == bytes);
  const auto a = tensor_list(ck.params);
  const auto b = tensor_list(back.params);
  REQUIRE(a.size() == 42);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);

  const auto path = temp_dir() / "model.ckpt";
  save_checkpoint(path, ck);
  const auto reloaded = load_checkpoint(path);
  save_checkpoint(path, reloaded);
  CHECK(read_file(path) == bytes);

  ModelConfig other = c;
  other.heads = 2;
  CHECK_THROWS_AS(decode_checkpoint(bytes, &other), ConfigMismatchError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 4)), CorruptionError);
  CHECK_THROWS_AS(decode_checkpoint("NOPE"), FormatError);

  // Header claims a different shape than the payload carries.
  std::string tampered = bytes;
  const auto pos = tampered.find("\"shape\":[6,6]");
  REQUIRE(pos != std::string::npos);
  tampered.replace(pos, 13, "\"shape\":[6,5]");
  CHECK_THROWS_AS(decode_checkpoint(tampered), CorruptionError);
}
