#ifndef LODSEG_VOLUME_NIFTI_HPP
#define LODSEG_VOLUME_NIFTI_HPP

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer. Little-endian only.
// Affine comes from the sform when sform_code > 0, else from the qform,
// else from pixdim alone.

#include <zlib.h>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg::nifti {

#pragma pack(push, 1)
struct Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

inline bool is_integer_type(std::int16_t dt) {
  return dt == kUInt8 || dt == kInt16 || dt == kInt32 || dt == kInt8 || dt == kUInt16 || dt == kUInt32;
}

inline int bytes_per_voxel(std::int16_t dt) {
  switch (dt) {
    case kUInt8:
    case kInt8: return 1;
    case kInt16:
    case kUInt16: return 2;
    case kInt32:
    case kUInt32:
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

inline bool is_gzip_path(const std::filesystem::path& p) {
  return p.extension() == ".gz";
}

// Raw image as stored: header, geometry and intensities after scaling.
struct RawImage {
  Header header{};
  Shape3 shape{};
  Affine affine = Affine::Identity();
  std::vector<double> values;
};

inline Affine qform_affine(const Header& h) {
  double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  double a = 1.0 - (b * b + c * c + d * d);
  a = a < 1e-7 ? 0.0 : std::sqrt(a);
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
  double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
  Eigen::Vector3d dx(h.pixdim[1] > 0 ? h.pixdim[1] : 1.0, h.pixdim[2] > 0 ? h.pixdim[2] : 1.0,
                     h.pixdim[3] > 0 ? h.pixdim[3] : 1.0);
  dx.z() *= qfac;
  Affine m = Affine::Identity();
  m.topLeftCorner<3, 3>() = r * dx.asDiagonal();
  m(0, 3) = h.qoffset_x;
  m(1, 3) = h.qoffset_y;
  m(2, 3) = h.qoffset_z;
  return m;
}

inline Affine header_affine(const Header& h) {
  if (h.sform_code > 0) {
    Affine m = Affine::Identity();
    for (int j = 0; j < 4; ++j) {
      m(0, j) = h.srow_x[j];
      m(1, j) = h.srow_y[j];
      m(2, j) = h.srow_z[j];
    }
    return m;
  }
  if (h.qform_code > 0) return qform_affine(h);
  Affine m = Affine::Identity();
  for (int i = 0; i < 3; ++i) m(i, i) = h.pixdim[i + 1] > 0 ? h.pixdim[i + 1] : 1.0;
  return m;
}

// Fills the quaternion fields from the rotational part of `m` (nearest proper
// rotation; a negative determinant is absorbed by qfac = -1).
inline void set_qform(Header& h, const Affine& m) {
  Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  Eigen::Vector3d spacing = r.colwise().norm();
  for (int i = 0; i < 3; ++i)
    if (spacing[i] > 0) r.col(i) /= spacing[i];
  double qfac = 1.0;
  if (r.determinant() < 0) {
    qfac = -1.0;
    r.col(2) = -r.col(2);
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d rot = svd.matrixU() * svd.matrixV().transpose();
  Eigen::Quaterniond q(rot);
  q.normalize();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  h.quatern_b = static_cast<float>(q.x());
  h.quatern_c = static_cast<float>(q.y());
  h.quatern_d = static_cast<float>(q.z());
  h.qoffset_x = static_cast<float>(m(0, 3));
  h.qoffset_y = static_cast<float>(m(1, 3));
  h.qoffset_z = static_cast<float>(m(2, 3));
  h.pixdim[0] = static_cast<float>(qfac);
  for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(spacing[i]);
  h.qform_code = 1;
}

namespace detail {

class GzReader {
 public:
  explicit GzReader(const std::filesystem::path& path) : path_(path.string()) {
    if (!std::filesystem::exists(path)) throw IoError("cannot read " + path_ + ": no such file");
    file_ = gzopen(path_.c_str(), "rb");
    if (!file_) throw IoError("cannot open " + path_);
  }
  ~GzReader() {
    if (file_) gzclose(file_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read(void* dst, std::size_t bytes) {
    auto* p = static_cast<char*>(dst);
    while (bytes > 0) {
      unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
      int got = gzread(file_, p, chunk);
      if (got <= 0) throw FormatError("truncated NIfTI file " + path_);
      p += got;
      bytes -= static_cast<std::size_t>(got);
    }
  }

  void skip(std::size_t bytes) {
    std::vector<char> sink(std::min<std::size_t>(bytes, 65536));
    while (bytes > 0) {
      std::size_t n = std::min(bytes, sink.size());
      read(sink.data(), n);
      bytes -= n;
    }
  }

 private:
  std::string path_;
  gzFile file_ = nullptr;
};

template <typename Src>
void convert(const std::vector<char>& raw, std::vector<double>& out) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    Src v;
    std::memcpy(&v, raw.data() + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<double>(v);
  }
}

inline void write_all(const std::filesystem::path& path, const Header& h, const void* payload, std::size_t bytes) {
  const char extension[4] = {0, 0, 0, 0};
  const auto tmp = path.string() + ".tmp";
  if (is_gzip_path(path)) {
    gzFile f = gzopen(tmp.c_str(), "wb6");
    if (!f) throw IoError("cannot write " + path.string());
    bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h)) && gzwrite(f, extension, 4) == 4;
    const char* p = static_cast<const char*>(payload);
    std::size_t left = bytes;
    while (ok && left > 0) {
      unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(left, 1u << 30));
      ok = gzwrite(f, p, chunk) == static_cast<int>(chunk);
      p += chunk;
      left -= chunk;
    }
    ok = (gzclose(f) == Z_OK) && ok;
    if (!ok) throw IoError("failed writing " + path.string());
  } else {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(extension, 4);
    out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path.string() + ": " + ec.message());
}

inline Header make_header(Shape3 shape, const Affine& affine, std::int16_t datatype) {
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(shape.x);
  h.dim[2] = static_cast<std::int16_t>(shape.y);
  h.dim[3] = static_cast<std::int16_t>(shape.z);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(datatype));
  for (int i = 0; i < 8; ++i) h.pixdim[i] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // mm
  set_qform(h, affine);
  h.sform_code = 1;
  for (int j = 0; j < 4; ++j) {
    h.srow_x[j] = static_cast<float>(affine(0, j));
    h.srow_y[j] = static_cast<float>(affine(1, j));
    h.srow_z[j] = static_cast<float>(affine(2, j));
  }
  std::memcpy(h.magic, "n+1\0", 4);
  std::strncpy(h.descrip, "lodseg", sizeof(h.descrip) - 1);
  return h;
}

}  // namespace detail

inline RawImage read_raw(const std::filesystem::path& path) {
  detail::GzReader in(path);
  RawImage img;
  Header& h = img.header;
  in.read(&h, sizeof(h));
  if (h.sizeof_hdr != 348) {
    std::int32_t swapped = __builtin_bswap32(static_cast<std::uint32_t>(h.sizeof_hdr));
    if (swapped == 348) throw FormatError(path.string() + ": big-endian NIfTI is not supported");
    throw FormatError(path.string() + ": not a NIfTI-1 file (sizeof_hdr=" + std::to_string(h.sizeof_hdr) + ")");
  }
  if (std::memcmp(h.magic, "n+1", 3) != 0) {
    throw FormatError(path.string() + ": unsupported NIfTI magic (only single-file n+1 is supported)");
  }
  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7) throw FormatError(path.string() + ": expected a 3D image, dim[0]=" + std::to_string(ndim));
  for (int i = 4; i <= ndim; ++i) {
    if (h.dim[i] > 1) {
      throw FormatError(path.string() + ": expected a 3D image, found extent " + std::to_string(h.dim[i]) +
                        " along dimension " + std::to_string(i));
    }
  }
  img.shape = {h.dim[1], h.dim[2], h.dim[3]};
  if (!img.shape.positive()) throw FormatError(path.string() + ": non-positive image extent");
  const int bpv = bytes_per_voxel(h.datatype);
  if (bpv == 0) throw FormatError(path.string() + ": unsupported datatype " + std::to_string(h.datatype));

  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (offset < sizeof(Header)) throw FormatError(path.string() + ": invalid vox_offset");
  in.skip(offset - sizeof(Header));

  const std::size_t n = img.shape.voxels();
  std::vector<char> raw(n * static_cast<std::size_t>(bpv));
  in.read(raw.data(), raw.size());
  img.values.resize(n);
  switch (h.datatype) {
    case kUInt8: detail::convert<std::uint8_t>(raw, img.values); break;
    case kInt8: detail::convert<std::int8_t>(raw, img.values); break;
    case kInt16: detail::convert<std::int16_t>(raw, img.values); break;
    case kUInt16: detail::convert<std::uint16_t>(raw, img.values); break;
    case kInt32: detail::convert<std::int32_t>(raw, img.values); break;
    case kUInt32: detail::convert<std::uint32_t>(raw, img.values); break;
    case kFloat32: detail::convert<float>(raw, img.values); break;
    case kFloat64: detail::convert<double>(raw, img.values); break;
    default: break;
  }
  const double slope = h.scl_slope;
  const double inter = h.scl_inter;
  if (std::isfinite(slope) && slope != 0.0 && (slope != 1.0 || inter != 0.0)) {
    for (auto& v : img.values) v = v * slope + inter;
  }
  img.affine = header_affine(h);
  return img;
}

inline Volume load_volume(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  validate_affine(raw.affine);
  Volume v(raw.shape, raw.affine);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    v.data[i] = static_cast<float>(raw.values[i]);
    if (!std::isfinite(v.data[i])) ++bad;
  }
  if (bad > 0) {
    throw SanitationError(path.string() + ": " + std::to_string(bad) + " non-finite voxel(s) (NaN/Inf)", bad);
  }
  return v;
}

inline LabelMap load_labels(const std::filesystem::path& path, const ClassScheme& scheme) {
  RawImage raw = read_raw(path);
  validate_affine(raw.affine);
  LabelMap l(raw.shape, raw.affine, scheme);
  const double limit = scheme.num_classes();
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const double v = raw.values[i];
    if (!std::isfinite(v) || v < 0 || v != std::floor(v)) {
      throw FormatError(path.string() + ": label volume holds a non-integral or negative value");
    }
    if (v >= limit) {
      throw ContractError(path.string() + ": label " + std::to_string(static_cast<long long>(v)) +
                          " is outside the " + std::to_string(scheme.num_classes()) + "-class scheme");
    }
    l.data[i] = static_cast<Label>(v);
  }
  return l;
}

// Float32 payload; the affine is written to both sform and qform.
inline void save_volume(const Volume& v, const std::filesystem::path& path) {
  validate_affine(v.affine);
  auto h = detail::make_header(v.shape, v.affine, kFloat32);
  detail::write_all(path, h, v.data.data(), v.data.size() * sizeof(float));
}

// Labels are written as uint8 when they fit, else uint16.
inline void save_labels(const LabelMap& l, const std::filesystem::path& path) {
  validate_affine(l.affine);
  if (l.scheme.num_classes() <= 256) {
    std::vector<std::uint8_t> bytes(l.data.begin(), l.data.end());
    auto h = detail::make_header(l.shape, l.affine, kUInt8);
    detail::write_all(path, h, bytes.data(), bytes.size());
  } else {
    auto h = detail::make_header(l.shape, l.affine, kUInt16);
    detail::write_all(path, h, l.data.data(), l.data.size() * sizeof(Label));
  }
}

// Reads only the header; used to decide between image and label handling.
inline Header read_header(const std::filesystem::path& path) {
  detail::GzReader in(path);
  Header h{};
  in.read(&h, sizeof(h));
  if (h.sizeof_hdr != 348) throw FormatError(path.string() + ": not a NIfTI-1 file");
  return h;
}

}  // namespace lodseg::nifti

#endif  // LODSEG_VOLUME_NIFTI_HPP
