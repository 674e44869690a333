#include "hbm/storage.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include "hbm/errors.hpp"

namespace hbm {

namespace {

constexpr std::string_view kDatasetMagic = "HBE1";
constexpr std::string_view kCheckpointMagic = "HBMC";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CorruptionError(std::string("truncated payload while reading ") + what);
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }

  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Document& EmbeddedDataset::find(std::uint32_t id) const {
  auto it = std::find_if(documents.begin(), documents.end(),
                         [id](const Document& d) { return d.id == id; });
  if (it == documents.end()) throw DataError("unknown document id " + std::to_string(id));
  return *it;
}

void EmbeddedDataset::check_compatible(const ModelConfig& config) const {
  if (embed_dim != config.embed_dim) {
    throw DataError("dataset embedding width " + std::to_string(embed_dim) +
                    " does not match model width " + std::to_string(config.embed_dim));
  }
  for (const auto& doc : documents) {
    if (doc.label >= config.num_classes) {
      throw DataError("document " + std::to_string(doc.id) + " has label " +
                      std::to_string(doc.label) + " outside the model's classes");
    }
  }
}

std::string encode_dataset(const EmbeddedDataset& dataset) {
  std::string out(kDatasetMagic);
  put_u32(out, kDatasetVersion);
  put_u32(out, dataset.embed_dim);
  put_u32(out, static_cast<std::uint32_t>(dataset.documents.size()));
  for (const auto& doc : dataset.documents) {
    if (doc.embeddings.cols() != dataset.embed_dim) {
      throw DataError("document " + std::to_string(doc.id) + " width differs from dataset d_e");
    }
    if (doc.embeddings.rows() == 0) {
      throw DataError("document " + std::to_string(doc.id) + " has no sentences");
    }
    put_u32(out, doc.id);
    put_u32(out, doc.label);
    put_u32(out, static_cast<std::uint32_t>(doc.embeddings.rows()));
    for (float v : doc.embeddings.values()) put_f32(out, v);
  }
  return out;
}

EmbeddedDataset decode_dataset(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != kDatasetMagic) {
    throw FormatError("not an HBE1 dataset (bad magic)");
  }
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported HBE1 version " + std::to_string(version));
  }
  EmbeddedDataset ds;
  ds.embed_dim = in.u32("d_e");
  const std::uint32_t count = in.u32("document count");
  for (std::uint32_t k = 0; k < count; ++k) {
    Document doc;
    doc.id = in.u32("document id");
    doc.label = in.u32("label");
    const std::uint32_t s = in.u32("sentence count");
    if (s == 0) throw FormatError("document " + std::to_string(doc.id) + " has zero sentences");
    const std::uint64_t n = static_cast<std::uint64_t>(s) * ds.embed_dim;
    if (n * 4 > in.remaining()) throw CorruptionError("truncated payload in document " + std::to_string(doc.id));
    std::vector<float> values(n);
    for (auto& v : values) v = in.f32("embedding");
    doc.embeddings = Mat(s, ds.embed_dim, std::move(values));
    ds.documents.push_back(std::move(doc));
  }
  if (in.remaining() != 0) throw CorruptionError("trailing bytes after last document");
  return ds;
}

std::filesystem::path sidecar_path(const std::filesystem::path& dataset_path) {
  return dataset_path.string() + ".sentences.json";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_dataset(const std::filesystem::path& path, const EmbeddedDataset& dataset) {
  write_file(path, encode_dataset(dataset));
  nlohmann::json sidecar = nlohmann::json::object();
  bool any = false;
  for (const auto& doc : dataset.documents) {
    if (!doc.sentences) continue;
    any = true;
    sidecar[std::to_string(doc.id)] = *doc.sentences;
  }
  if (any) write_file(sidecar_path(path), sidecar.dump(1));
}

EmbeddedDataset read_dataset(const std::filesystem::path& path) {
  EmbeddedDataset ds = decode_dataset(read_file(path));
  const auto side = sidecar_path(path);
  if (!std::filesystem::exists(side)) return ds;
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(read_file(side));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sentence sidecar " + side.string() + ": " + e.what());
  }
  for (auto& doc : ds.documents) {
    auto it = sidecar.find(std::to_string(doc.id));
    if (it == sidecar.end()) continue;
    auto sentences = it->get<std::vector<std::string>>();
    if (sentences.size() != doc.sentence_count()) {
      throw DataError("sidecar lists " + std::to_string(sentences.size()) + " sentences for document " +
                      std::to_string(doc.id) + " but the embedding matrix has " +
                      std::to_string(doc.sentence_count()));
    }
    doc.sentences = std::move(sentences);
  }
  return ds;
}

SentenceMatrix pad_to_m(const Document& doc, std::size_t m) {
  const std::size_t d = doc.embeddings.cols();
  const std::size_t keep = std::min(doc.sentence_count(), m);
  SentenceMatrix out{Mat(m, d), keep};
  for (std::size_t i = 0; i < keep; ++i) {
    std::copy(doc.embeddings.row(i).begin(), doc.embeddings.row(i).end(), out.values.row(i).begin());
  }
  return out;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"max_sentences", c.max_sentences},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_expansion", c.ffn_expansion},
          {"num_classes", c.num_classes},
          {"dropout", c.dropout},
          {"layernorm_eps", static_cast<double>(c.layernorm_eps)},
          {"mask_padding", c.mask_padding},
          {"saliency_layer", c.saliency_layer}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.max_sentences = j.at("max_sentences").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_expansion = j.at("ffn_expansion").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.layernorm_eps = static_cast<float>(j.at("layernorm_eps").get<double>());
    c.mask_padding = j.at("mask_padding").get<bool>();
    c.saliency_layer = j.at("saliency_layer").get<std::size_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model config: ") + e.what());
  }
}

std::string encode_checkpoint(const Checkpoint& ck) {
  check_shapes(ck.params, ck.config);
  const auto names = tensor_names(ck.config);
  const auto tensors = tensor_list(ck.params);
  nlohmann::json directory = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    directory.push_back({{"name", names[i]},
                         {"shape", {tensors[i]->rows(), tensors[i]->cols()}},
                         {"offset", offset}});
    offset += tensors[i]->size() * 4;
  }
  const nlohmann::json header = {
      {"config", config_to_json(ck.config)},
      {"meta", {{"epoch", ck.meta.epoch}, {"loss", ck.meta.loss}, {"seed", ck.meta.seed}}},
      {"tensors", directory},
      {"payload_bytes", offset}};
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (const Mat* t : tensors)
    for (float v : t->values()) put_f32(out, v);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const ModelConfig* expected) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != kCheckpointMagic) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  Reader in(bytes);
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t header_len = in.u64("header length");
  if (header_len > in.remaining()) throw CorruptionError("checkpoint header is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  if (expected != nullptr && !(*expected == ck.config)) {
    throw ConfigMismatchError("checkpoint was saved with a different model config");
  }
  try {
    const auto& meta = header.at("meta");
    ck.meta.epoch = meta.at("epoch").get<std::uint64_t>();
    ck.meta.loss = meta.at("loss").get<double>();
    ck.meta.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint metadata: ") + e.what());
  }

  static_cast<ParameterSet&>(ck.params) = zero_parameter_set(ck.config);
  const auto names = tensor_names(ck.config);
  auto tensors = tensor_list(ck.params);
  const auto& directory = header.at("tensors");
  if (!directory.is_array() || directory.size() != tensors.size()) {
    throw CorruptionError("checkpoint tensor directory does not match its config");
  }
  const std::uint64_t payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
  if (payload_bytes != in.remaining()) throw CorruptionError("checkpoint payload size mismatch");
  const std::string_view payload = in.take(payload_bytes, "payload");

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = directory[i];
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (entry.at("name").get<std::string>() != names[i] || shape.size() != 2 ||
        shape[0] != tensors[i]->rows() || shape[1] != tensors[i]->cols()) {
      throw CorruptionError("tensor " + names[i] + " shape disagrees with header config");
    }
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t len = tensors[i]->size() * 4;
    if (offset + len > payload.size()) throw CorruptionError("tensor " + names[i] + " runs past payload");
    Reader tr(payload.substr(offset, len));
    for (float& v : tensors[i]->values()) v = tr.f32("tensor value");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  return decode_checkpoint(read_file(path), expected);
}

}  // namespace hbm
