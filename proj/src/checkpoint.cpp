#include "mosaic/errors.hpp"
#include "mosaic/gfnet.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <fstream>
#include <type_traits>

namespace mosaic {

namespace {

template <class S>
const char* precision_name() {
  return std::is_same_v<S, float> ? "f32" : "f64";
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "model.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest " + path.string() + ": " + e.what());
  }
}

template <class File>
Eigen::Matrix<File, Eigen::Dynamic, 1> read_weights(const std::filesystem::path& path, Eigen::Index n) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = static_cast<std::size_t>(n) * sizeof(File);
  if (bytes != expected) {
    throw FormatError(path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(expected));
  }
  in.seekg(0);
  Eigen::Matrix<File, Eigen::Dynamic, 1> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("read failed for " + path.string());
  return v;
}

}  // namespace

template <class S>
void checkpoint_save(const MlpModel<S>& model, const std::filesystem::path& dir, const std::string& fingerprint) {
  static_assert(std::endian::native == std::endian::little);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const auto& spec = model.spec();
  const nlohmann::ordered_json manifest = {
      {"format_version", kCheckpointFormatVersion},
      {"arch", to_string(spec.arch)},
      {"exact_bc", spec.exact_bc},
      {"layer_sizes", spec.layer_sizes()},
      {"activation", "tanh"},
      {"precision", precision_name<S>()},
      {"n_bc", spec.n_bc},
      {"genome_edge_length", spec.edge_length},
      {"n_params", model.n_params()},
      {"training_fingerprint", fingerprint},
  };
  {
    std::ofstream out(dir / "model.json");
    if (!out) throw IoError("cannot write " + (dir / "model.json").string());
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(dir / "weights.bin", std::ios::binary);
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(model.n_params() * sizeof(S)));
  if (!out) throw IoError("write failed for " + (dir / "weights.bin").string());
}

std::string checkpoint_precision(const std::filesystem::path& dir) {
  try {
    return read_manifest(dir).at("precision").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest in " + dir.string() + " lacks precision: " + e.what());
  }
}

template <class S>
MlpModel<S> checkpoint_load(const std::filesystem::path& dir) {
  const nlohmann::json m = read_manifest(dir);
  ModelSpec spec;
  std::vector<int> sizes;
  std::string precision;
  try {
    if (m.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw FormatError("unsupported checkpoint format version in " + dir.string());
    }
    const std::string arch = m.at("arch").get<std::string>();
    if (arch != "fc" && arch != "lpfc") throw FormatError("unknown architecture tag '" + arch + "'");
    spec.arch = arch == "fc" ? Architecture::fc : Architecture::lpfc;
    spec.exact_bc = m.at("exact_bc").get<bool>();
    spec.n_bc = m.at("n_bc").get<int>();
    spec.edge_length = m.at("genome_edge_length").get<double>();
    sizes = m.at("layer_sizes").get<std::vector<int>>();
    precision = m.at("precision").get<std::string>();
    if (m.at("activation").get<std::string>() != "tanh") throw FormatError("unsupported activation");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest in " + dir.string() + ": " + e.what());
  }

  // Hidden widths follow from the layer sizes once the architecture fixes
  // the input and output widths.
  const bool fc = spec.arch == Architecture::fc;
  const int in_width = fc ? spec.n_bc + 2 : 2;
  if (sizes.size() < (fc ? 3u : 2u) || sizes.front() != in_width || (fc && sizes.back() != 1)) {
    throw FormatError("layer sizes in " + dir.string() + " do not match architecture '" + to_string(spec.arch) + "'");
  }
  spec.hidden.assign(sizes.begin() + 1, fc ? sizes.end() - 1 : sizes.end());
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw FormatError("checkpoint " + dir.string() + " is inconsistent: " + e.what());
  }

  MlpModel<S> model(spec);
  const auto path = dir / "weights.bin";
  if (precision == "f32") {
    model.params() = read_weights<float>(path, model.n_params()).template cast<S>();
  } else if (precision == "f64") {
    model.params() = read_weights<double>(path, model.n_params()).template cast<S>();
  } else {
    throw FormatError("unknown checkpoint precision '" + precision + "'");
  }
  return model;
}

template void checkpoint_save(const MlpModel<float>&, const std::filesystem::path&, const std::string&);
template void checkpoint_save(const MlpModel<double>&, const std::filesystem::path&, const std::string&);
template MlpModel<float> checkpoint_load(const std::filesystem::path&);
template MlpModel<double> checkpoint_load(const std::filesystem::path&);

}  // namespace mosaic
