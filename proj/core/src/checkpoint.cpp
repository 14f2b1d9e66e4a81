#include "wsx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace wsx {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'X', 'C', 'K', 'P', 'T', '\0'};

template <class U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw Error(std::string("checkpoint truncated while reading ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model, const ExtractionThresholds& thresholds) {
  nlohmann::ordered_json meta;
  meta["config"] = nlohmann::ordered_json::parse(model.config().to_json());
  meta["thresholds"] = thresholds.gamma;
  const std::string meta_text = meta.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  const auto& items = model.params().items();
  put<std::uint64_t>(out, items.size());
  for (const auto& p : items) {
    put<std::uint32_t>(out, std::uint32_t(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, std::uint32_t(p.var.shape().size()));
    for (std::size_t d : p.var.shape()) put<std::uint64_t>(out, d);
  }
  for (const auto& p : items)
    for (double x : p.var.value().values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic)))
    throw Error("not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw Error("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  const std::string_view meta_text = r.take(meta_len, "metadata");

  ModelConfig cfg;
  ExtractionThresholds thr;
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    cfg = ModelConfig::from_json(meta.at("config").dump());
    thr.gamma = meta.at("thresholds").get<std::array<double, kNumAttributes>>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("checkpoint metadata: ") + ex.what());
  }

  auto model = std::make_unique<Model>(cfg);
  const auto& items = model->params().items();
  const auto count = r.get<std::uint64_t>("tensor count");
  if (count != items.size()) {
    throw Error("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                std::to_string(items.size()));
  }
  for (const auto& p : items) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    const std::string_view name = r.take(name_len, "tensor name");
    if (name != p.name) throw Error("checkpoint tensor '" + std::string(name) + "' where '" + p.name + "' expected");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("tensor shape");
    if (shape != p.var.shape()) {
      throw Error("checkpoint tensor '" + p.name + "' has shape " + shape_str(shape) + ", model expects " +
                  shape_str(p.var.shape()));
    }
  }
  // payloads are staged first so a short file cannot leave a half-written model behind
  std::vector<Buffer> staged;
  for (const auto& p : items) {
    Buffer b(p.var.size());
    for (auto& x : b) x = std::bit_cast<double>(r.get<std::uint64_t>("tensor payload"));
    staged.push_back(std::move(b));
  }
  if (!r.done()) throw Error("checkpoint has trailing bytes");
  for (std::size_t i = 0; i < items.size(); ++i) {
    Var v = items[i].var;
    v.mutable_value().values() = std::move(staged[i]);
  }
  return Checkpoint{std::move(model), thr};
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const ExtractionThresholds& thresholds) {
  const std::string bytes = serialize_checkpoint(model, thresholds);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return deserialize_checkpoint(buf.str());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace wsx
