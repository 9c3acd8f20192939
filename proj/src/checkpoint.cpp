#include "dodti/checkpoint.hpp"

#include "dodti/error.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace dodti {

namespace {

constexpr char kMagic[8] = {'D', 'O', 'D', 'T', 'I', 'C', 'K', 'P'};
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  nlohmann::json header;
  header["format"] = "dodti-denoiser";
  header["version"] = kVersion;
  header["width"] = model.weights.width;
  header["kernel_size"] = 3;
  header["kernel_layout"] = "row-major (out, offset*in + in) with offset = (dz+1)*9+(dy+1)*3+(dx+1); column-major storage";
  header["pathways"] = {{"ln_s0", {0, 1}}, {"diagonal", {1, 3}}, {"off_diagonal", {4, 3}}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.weights.layers)
    layers.push_back({{"in", l.in_channels}, {"out", l.out_channels}, {"kernel", {l.kernel.rows(), l.kernel.cols()}},
                      {"bias", l.bias.size()}});
  header["layers"] = layers;
  header["parameter_count"] = model.weights.parameter_count();
  header["rho"] = model.rho;
  header["lambda"] = model.lambda;
  header["info"] = model.info;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), std::streamsize(text.size()));
  const Eigen::VectorXd flat = model.weights.flatten();
  std::vector<float> payload(std::size_t(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) payload[std::size_t(i)] = float(flat[i]);
  out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(path.string() + " is not a denoiser checkpoint");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 26))
    throw DataError(path.string() + ": corrupt checkpoint header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), std::streamsize(len))) throw DataError(path.string() + ": truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != "dodti-denoiser" || header.value("version", 0) != kVersion)
    throw DataError(path.string() + ": unsupported checkpoint format or version");

  TrainedModel model;
  model.weights = DenoiserWeights::zeros(header.at("width").get<int>());
  const auto& layers = header.at("layers");
  if (layers.size() != model.weights.layers.size()) throw DataError(path.string() + ": layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].at("in").get<int>() != model.weights.layers[l].in_channels ||
        layers[l].at("out").get<int>() != model.weights.layers[l].out_channels)
      throw DataError(path.string() + ": layer " + std::to_string(l) + " shape mismatch");
  const std::size_t count = model.weights.parameter_count();
  if (header.at("parameter_count").get<std::size_t>() != count) throw DataError(path.string() + ": parameter count mismatch");
  std::vector<float> payload(count);
  if (!in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(count * sizeof(float))))
    throw DataError(path.string() + ": truncated checkpoint payload");
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes after the payload");
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) flat[Eigen::Index(i)] = double(payload[i]);
  if (!flat.allFinite()) throw DataError(path.string() + ": non-finite weights");
  model.weights.unflatten(flat);
  model.rho = header.value("rho", 1e-3);
  model.lambda = header.value("lambda", 0.1);
  model.info = header.value("info", nlohmann::json::object());
  return model;
}

}  // namespace dodti
