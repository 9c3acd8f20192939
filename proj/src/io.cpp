#include "dodti/io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dodti {

namespace {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

// Header field offsets (NIfTI-1).
constexpr int kOffDim = 40;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffXyztUnits = 123;
constexpr int kOffQformCode = 252;
constexpr int kOffSformCode = 254;
constexpr int kOffSrowX = 280;
constexpr int kOffMagic = 344;

template <class T>
T get(const std::vector<unsigned char>& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof v);
  return v;
}

template <class T>
void put(std::vector<unsigned char>& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof v);
}

bool has_gz_suffix(const std::filesystem::path& p) { return p.extension() == ".gz"; }

// gzread reads plain files transparently.
std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char chunk[1 << 16];
  int n;
  while ((n = gzread(f, chunk, sizeof chunk)) > 0) out.insert(out.end(), chunk, chunk + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const std::string what = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_BUF_ERROR))
    throw NiftiTruncatedError(path.string() + ": read failed (" + what + ")");
  return out;
}

void spill(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (!f) throw DataError("cannot write " + path.string());
    const bool ok = gzwrite(f, bytes.data(), unsigned(bytes.size())) == int(bytes.size());
    if (gzclose(f) != Z_OK || !ok) throw DataError("failed writing " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::vector<double>> read_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw DataError(path.string() + ": non-numeric token '" + tok + "'");
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

VolumeFile read_volume(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  if (buf.size() < std::size_t(kNiftiHeaderSize)) throw NiftiTruncatedError(path.string() + ": shorter than a NIfTI-1 header");
  const char* magic = reinterpret_cast<const char*>(buf.data() + kOffMagic);
  if (std::memcmp(magic, "ni1\0", 4) == 0)
    throw NiftiUnsupportedError(path.string() + ": detached-header NIfTI (ni1) is not supported");
  if (std::memcmp(magic, "n+1\0", 4) != 0) throw NiftiMagicError(path.string() + ": bad NIfTI-1 magic");
  const auto sizeof_hdr = get<std::int32_t>(buf, 0);
  if (sizeof_hdr != kNiftiHeaderSize)
    throw NiftiUnsupportedError(path.string() + ": sizeof_hdr is " + std::to_string(sizeof_hdr) +
                                " (big-endian files are not supported)");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(buf, std::size_t(kOffDim + 2 * i));
  if (dim[0] != 3 && dim[0] != 4) throw NiftiUnsupportedError(path.string() + ": dim[0] must be 3 or 4");
  for (int i = 1; i <= dim[0]; ++i)
    if (dim[i] < 1) throw NiftiUnsupportedError(path.string() + ": non-positive dimension");
  const auto datatype = get<std::int16_t>(buf, kOffDatatype);
  if (datatype != 4 && datatype != 16)
    throw NiftiUnsupportedError(path.string() + ": datatype " + std::to_string(datatype) + " is not int16 or float32");
  const std::size_t elem = datatype == 4 ? 2 : 4;
  const auto vox_offset = get<float>(buf, kOffVoxOffset);
  if (!(vox_offset >= float(kNiftiHeaderSize))) throw NiftiUnsupportedError(path.string() + ": invalid vox_offset");

  VolumeFile vf;
  const Dims d{dim[1], dim[2], dim[3]};
  const int channels = dim[0] == 4 ? dim[4] : 1;
  const std::size_t n = d.voxels() * std::size_t(channels);
  const auto start = std::size_t(vox_offset);
  if (buf.size() < start + n * elem) throw NiftiTruncatedError(path.string() + ": truncated payload");

  vf.meta.datatype = datatype;
  for (int i = 0; i < 3; ++i) vf.meta.voxel_size[std::size_t(i)] = get<float>(buf, std::size_t(kOffPixdim + 4 * (i + 1)));
  vf.meta.scl_slope = get<float>(buf, kOffSclSlope);
  vf.meta.scl_inter = get<float>(buf, kOffSclInter);
  if (get<std::int16_t>(buf, kOffSformCode) > 0)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        vf.meta.affine[std::size_t(r)][std::size_t(c)] = get<float>(buf, std::size_t(kOffSrowX + 16 * r + 4 * c));

  const bool scaled = vf.meta.scl_slope != 0.0 && std::isfinite(vf.meta.scl_slope);
  const double slope = scaled ? vf.meta.scl_slope : 1.0;
  const double inter = scaled ? vf.meta.scl_inter : 0.0;
  vf.volume = Volume(d, channels);
  const std::size_t nv = d.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = datatype == 4 ? double(get<std::int16_t>(buf, start + 2 * i)) : double(get<float>(buf, start + 4 * i));
    vf.volume.data(Eigen::Index(i / nv), Eigen::Index(i % nv)) = slope * raw + inter;
  }
  return vf;
}

void write_volume(const Volume& volume, const std::filesystem::path& path, const VolumeMeta* meta_template) {
  const VolumeMeta meta = meta_template ? *meta_template : VolumeMeta{};
  const Dims d = volume.dims;
  if (d.nx < 1 || d.ny < 1 || d.nz < 1 || volume.channels() < 1) throw DataError("write_volume: empty volume");
  if (d.nx > 32767 || d.ny > 32767 || d.nz > 32767 || volume.channels() > 32767)
    throw DataError("write_volume: dimension exceeds the NIfTI-1 limit");
  const std::size_t nv = d.voxels(), n = nv * std::size_t(volume.channels());
  std::vector<unsigned char> buf(std::size_t(kNiftiVoxOffset) + 4 * n, 0);

  put<std::int32_t>(buf, 0, kNiftiHeaderSize);
  const bool four_d = volume.channels() > 1;
  const std::int16_t dim[8] = {std::int16_t(four_d ? 4 : 3), std::int16_t(d.nx), std::int16_t(d.ny), std::int16_t(d.nz),
                               std::int16_t(volume.channels()), 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, std::size_t(kOffDim + 2 * i), dim[i]);
  put<std::int16_t>(buf, kOffDatatype, 16);
  put<std::int16_t>(buf, kOffBitpix, 32);
  const float pixdim[8] = {1.f, meta.voxel_size[0], meta.voxel_size[1], meta.voxel_size[2], 1.f, 1.f, 1.f, 1.f};
  for (int i = 0; i < 8; ++i) put<float>(buf, std::size_t(kOffPixdim + 4 * i), pixdim[i]);
  put<float>(buf, kOffVoxOffset, float(kNiftiVoxOffset));
  put<float>(buf, kOffSclSlope, 1.f);
  put<float>(buf, kOffSclInter, 0.f);
  buf[kOffXyztUnits] = 2 | 8;  // mm, s
  put<std::int16_t>(buf, kOffQformCode, 0);
  put<std::int16_t>(buf, kOffSformCode, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      put<float>(buf, std::size_t(kOffSrowX + 16 * r + 4 * c), meta.affine[std::size_t(r)][std::size_t(c)]);
  std::memcpy(buf.data() + kOffMagic, "n+1\0", 4);

  for (std::size_t i = 0; i < n; ++i)
    put<float>(buf, std::size_t(kNiftiVoxOffset) + 4 * i,
               float(volume.data(Eigen::Index(i / nv), Eigen::Index(i % nv))));
  spill(path, buf);
}

Mask read_mask(const std::filesystem::path& path, std::optional<Dims> expected) {
  const VolumeFile vf = read_volume(path);
  if (vf.volume.channels() != 1) throw DataError(path.string() + ": a mask must be 3D");
  if (expected && !(vf.volume.dims == *expected)) throw DataError(path.string() + ": mask dims do not match the data");
  Mask m(vf.volume.voxels());
  for (std::size_t v = 0; v < m.size(); ++v) m[v] = vf.volume.data(0, Eigen::Index(v)) != 0.0;
  return m;
}

void write_mask(const Mask& mask, const Dims& dims, const std::filesystem::path& path, const VolumeMeta* meta_template) {
  if (mask.size() != dims.voxels()) throw DataError("write_mask: size mismatch");
  Volume v(dims, 1);
  for (std::size_t i = 0; i < mask.size(); ++i) v.data(0, Eigen::Index(i)) = mask[i] ? 1.0 : 0.0;
  write_volume(v, path, meta_template);
}

void write_param_field(const ParamField& field, const std::filesystem::path& path, const VolumeMeta* meta_template) {
  Volume v(field.dims, kParamChannels);
  v.data = field.values;
  write_volume(v, path, meta_template);
}

ParamField read_param_field(const std::filesystem::path& path, Mask mask) {
  const VolumeFile vf = read_volume(path);
  if (vf.volume.channels() != kParamChannels) throw DataError(path.string() + ": expected 7 parameter volumes");
  if (!mask.empty() && mask.size() != vf.volume.voxels()) throw DataError(path.string() + ": mask size mismatch");
  ParamField f(vf.volume.dims, std::move(mask));
  f.values = vf.volume.data;
  return f;
}

GradientScheme read_gradients(const std::filesystem::path& bvals_path, const std::filesystem::path& bvecs_path) {
  const auto bvals_rows = read_grid(bvals_path);
  const auto bvecs = read_grid(bvecs_path);
  std::vector<double> bvals;
  for (const auto& r : bvals_rows) bvals.insert(bvals.end(), r.begin(), r.end());
  if (bvals.empty()) throw DataError(bvals_path.string() + ": no b-values");
  if (bvecs.size() != 3) throw DataError(bvecs_path.string() + ": expected 3 rows of direction components");
  for (const auto& r : bvecs)
    if (r.size() != bvals.size())
      throw DataError("bvals has " + std::to_string(bvals.size()) + " entries but bvecs has a row of " +
                      std::to_string(r.size()));

  GradientScheme s;
  for (std::size_t i = 0; i < bvals.size(); ++i) {
    GradientEntry e;
    if (bvals[i] < 0) throw DataError("negative b-value in column " + std::to_string(i));
    Eigen::Vector3d g(bvecs[0][i], bvecs[1][i], bvecs[2][i]);
    if (bvals[i] < kFslB0Threshold) {
      e.b = 0.0;
      e.g = Eigen::Vector3d::Zero();
    } else {
      const double norm = g.norm();
      if (!(norm >= 0.9 && norm <= 1.1))
        throw DataError("direction in column " + std::to_string(i) + " has norm " + std::to_string(norm) +
                        ", outside [0.9, 1.1]");
      e.b = bvals[i];
      e.g = g / norm;
    }
    s.entries.push_back(e);
  }
  return s;
}

void write_gradients(const GradientScheme& scheme, const std::filesystem::path& bvals_path,
                     const std::filesystem::path& bvecs_path) {
  std::ofstream bv(bvals_path), bg(bvecs_path);
  if (!bv || !bg) throw DataError("cannot write gradient files");
  bv.precision(10);
  bg.precision(17);
  for (std::size_t i = 0; i < scheme.size(); ++i) bv << (i ? " " : "") << scheme.entries[i].b;
  bv << "\n";
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < scheme.size(); ++i) bg << (i ? " " : "") << scheme.entries[i].g[c];
    bg << "\n";
  }
  if (!bv || !bg) throw DataError("failed writing gradient files");
}

}  // namespace dodti
