#include "symphony/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "symphony/errors.hpp"
#include "symphony/midi.hpp"

namespace symphony {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'Y', 'M', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_matrix(std::vector<std::uint8_t>& out, const ad::Matrix& m) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
  out.insert(out.end(), p, p + sizeof(double) * static_cast<std::size_t>(m.size()));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void take(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ValidationError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  ad::Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    ad::Matrix m(rows, cols);
    take(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> checkpoint_bytes(const model::HierModel& m, const optim::AdamW* opt,
                                           const nlohmann::json& extra) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, v] : m.params().entries()) {
    tensors.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
  }
  nlohmann::json header = {{"config", model::config_to_json(m.config())}, {"tensors", tensors}, {"extra", extra}};
  header["optimizer"] = opt ? nlohmann::json{{"steps", opt->steps_taken()}} : nlohmann::json(nullptr);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, v] : m.params().entries()) put_matrix(out, v.value());
  if (opt) {
    for (const auto& x : opt->first_moments()) put_matrix(out, x);
    for (const auto& x : opt->second_moments()) put_matrix(out, x);
  }
  return out;
}

LoadedCheckpoint checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  char magic[8];
  in.take(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ValidationError("not a checkpoint file (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = in.get<std::uint64_t>();
  std::string text(header_len, '\0');
  in.take(text.data(), header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }

  LoadedCheckpoint out;
  out.model = std::make_unique<model::HierModel>(model::config_from_json(header.at("config")));
  out.extra = header.value("extra", nlohmann::json::object());
  auto& entries = out.model->params().entries();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != entries.size()) throw ValidationError("checkpoint tensor count does not match the model");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = tensors[i];
    auto& [name, var] = entries[i];
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (t.at("name").get<std::string>() != name || rows != var.rows() || cols != var.cols()) {
      throw ValidationError("checkpoint tensor " + t.at("name").get<std::string>() + " does not match the model");
    }
    var.mutable_value() = in.matrix(rows, cols);
    shapes.emplace_back(rows, cols);
  }
  if (!header.at("optimizer").is_null()) {
    out.has_optimizer = true;
    out.optimizer_steps = header.at("optimizer").at("steps").get<long>();
    for (const auto& [r, c] : shapes) out.first_moments.push_back(in.matrix(r, c));
    for (const auto& [r, c] : shapes) out.second_moments.push_back(in.matrix(r, c));
  }
  if (!in.done()) throw ValidationError("trailing bytes after checkpoint payload");
  return out;
}

void save_checkpoint(const std::string& path, const model::HierModel& m, const optim::AdamW* opt,
                     const nlohmann::json& extra) {
  write_file(path, checkpoint_bytes(m, opt, extra));
}

LoadedCheckpoint load_checkpoint(const std::string& path) { return checkpoint_from_bytes(read_file(path)); }

void restore_optimizer(const LoadedCheckpoint& ckpt, optim::AdamW& opt) {
  if (!ckpt.has_optimizer) throw ValidationError("checkpoint carries no optimizer state");
  if (opt.first_moments().size() != ckpt.first_moments.size()) {
    throw ValidationError("optimizer does not match the checkpoint");
  }
  opt.first_moments() = ckpt.first_moments;
  opt.second_moments() = ckpt.second_moments;
  opt.set_steps_taken(ckpt.optimizer_steps);
}

}  // namespace symphony
