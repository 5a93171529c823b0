#include "distillery/datasets.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace distillery {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex(std::uint32_t v) {
  std::ostringstream s;
  s << "0x" << std::hex << v;
  return s.str();
}

void require_bytes(std::span<const std::uint8_t> bytes, std::size_t expected, const char* what) {
  if (bytes.size() < expected) {
    throw ParseError(ParseError::Kind::truncated,
                     std::string(what) + ": truncated, expected " + std::to_string(expected) +
                         " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw ParseError(ParseError::Kind::trailing_bytes,
                     std::string(what) + ": expected " + std::to_string(expected) +
                         " bytes, got " + std::to_string(bytes.size()));
  }
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ImageSet parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  if (images.size() < 16) {
    throw ParseError(ParseError::Kind::truncated,
                     "idx images: truncated header, expected 16 bytes, got " +
                         std::to_string(images.size()));
  }
  if (const auto magic = read_be32(images, 0); magic != kIdxImageMagic) {
    throw ParseError(ParseError::Kind::bad_magic, "idx images: bad magic " + hex(magic));
  }
  if (labels.size() < 8) {
    throw ParseError(ParseError::Kind::truncated,
                     "idx labels: truncated header, expected 8 bytes, got " +
                         std::to_string(labels.size()));
  }
  if (const auto magic = read_be32(labels, 0); magic != kIdxLabelMagic) {
    throw ParseError(ParseError::Kind::bad_magic, "idx labels: bad magic " + hex(magic));
  }
  ImageSet set;
  set.n = read_be32(images, 4);
  set.height = read_be32(images, 8);
  set.width = read_be32(images, 12);
  const std::size_t label_count = read_be32(labels, 4);
  if (label_count != set.n) {
    throw ParseError(ParseError::Kind::count_mismatch,
                     "idx: " + std::to_string(set.n) + " images but " +
                         std::to_string(label_count) + " labels");
  }
  require_bytes(images, 16 + set.n * set.height * set.width, "idx images");
  require_bytes(labels, 8 + set.n, "idx labels");
  set.pixels.assign(images.begin() + 16, images.end());
  set.labels.assign(labels.begin() + 8, labels.end());
  for (std::size_t i = 0; i < set.n; ++i) {
    if (set.labels[i] >= set.classes) {
      throw ParseError(ParseError::Kind::bad_value,
                       "idx labels: label " + std::to_string(set.labels[i]) + " at index " +
                           std::to_string(i) + " exceeds the class count");
    }
  }
  return set;
}

ImageSet load_idx(const std::filesystem::path& images_path,
                  const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  return parse_idx(images, labels);
}

std::vector<std::uint8_t> encode_idx_images(const ImageSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + set.pixels.size());
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(set.n));
  write_be32(out, static_cast<std::uint32_t>(set.height));
  write_be32(out, static_cast<std::uint32_t>(set.width));
  out.insert(out.end(), set.pixels.begin(), set.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const ImageSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + set.labels.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(set.n));
  out.insert(out.end(), set.labels.begin(), set.labels.end());
  return out;
}

ImageSet parse_cifar(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw ParseError(ParseError::Kind::bad_size,
                     "cifar: size " + std::to_string(bytes.size()) +
                         " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  ImageSet set;
  set.height = 32;
  set.width = 32;
  set.channels = 3;
  set.n = bytes.size() / kCifarRecordBytes;
  set.pixels.reserve(set.n * set.image_size());
  set.labels.reserve(set.n);
  for (std::size_t i = 0; i < set.n; ++i) {
    const auto record = bytes.subspan(i * kCifarRecordBytes, kCifarRecordBytes);
    if (record[0] >= set.classes) {
      throw ParseError(ParseError::Kind::bad_value,
                       "cifar: label " + std::to_string(record[0]) + " in record " +
                           std::to_string(i));
    }
    set.labels.push_back(record[0]);
    set.pixels.insert(set.pixels.end(), record.begin() + 1, record.end());
  }
  return set;
}

ImageSet load_cifar(std::span<const std::filesystem::path> batch_paths) {
  ImageSet all;
  all.height = 32;
  all.width = 32;
  all.channels = 3;
  for (const auto& path : batch_paths) {
    ImageSet part;
    try {
      part = parse_cifar(read_file(path));
    } catch (const ParseError& e) {
      throw ParseError(e.kind(), path.string() + ": " + e.what());
    }
    all.n += part.n;
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  return all;
}

Vector image_features(const ImageSet& set, std::size_t i) {
  const auto img = set.image(i);
  Vector out(idx(img.size()));
  for (std::size_t k = 0; k < img.size(); ++k) out[idx(k)] = img[k] / 255.0;
  return out;
}

Vector block_mean(const Vector& image, std::size_t height, std::size_t width, std::size_t block) {
  if (block == 0 || height % block != 0 || width % block != 0 ||
      static_cast<std::size_t>(image.size()) != height * width) {
    throw DomainError("block_mean: image shape is not divisible into blocks");
  }
  const std::size_t oh = height / block, ow = width / block;
  Vector out = Vector::Zero(idx(oh * ow));
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      out[idx((r / block) * ow + c / block)] += image[idx(r * width + c)];
    }
  }
  return out / static_cast<double>(block * block);
}

Vector upsample_replicate(const Vector& image, std::size_t height, std::size_t width,
                          std::size_t factor) {
  if (static_cast<std::size_t>(image.size()) != height * width || factor == 0) {
    throw DomainError("upsample_replicate: bad shape");
  }
  const std::size_t ow = width * factor;
  Vector out(idx(height * factor * ow));
  for (std::size_t r = 0; r < height * factor; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      out[idx(r * ow + c)] = image[idx((r / factor) * width + c / factor)];
    }
  }
  return out;
}

Vector downscale(std::span<const std::uint8_t> image, std::size_t height, std::size_t width) {
  if (height != 28 || width != 28 || image.size() != height * width) {
    throw DomainError("downscale expects a 28x28 grayscale image");
  }
  constexpr std::size_t kBlock = 4;
  constexpr std::size_t kOut = 7;
  // Integer block sums, then a single division keeps the arithmetic exact.
  std::vector<unsigned> sums(kOut * kOut, 0);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      sums[(r / kBlock) * kOut + c / kBlock] += image[r * width + c];
    }
  }
  Vector out(idx(kOut * kOut));
  for (std::size_t k = 0; k < sums.size(); ++k) {
    out[idx(k)] = sums[k] / (255.0 * kBlock * kBlock);
  }
  return out;
}

Vector pollute(const Vector& features, double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw DomainError("pollute: sigma must be non-negative");
  Vector out = features;
  if (sigma == 0.0) return out;
  for (Eigen::Index k = 0; k < out.size(); ++k) out[k] += sigma * rng.normal();
  return out;
}

MultitaskTable parse_multitask_csv(const std::string& text, char delimiter, std::size_t inputs,
                                   std::size_t outputs) {
  const std::size_t arity = inputs + outputs;
  std::vector<double> values;
  std::size_t rows = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line.front() == '#') continue;
    std::size_t cells = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t end = std::min(line.find(delimiter, start), line.size());
      std::string_view cell(line.data() + start, end - start);
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
      if (cell.starts_with('+')) cell.remove_prefix(1);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() ||
          !std::isfinite(v)) {
        throw ParseError(ParseError::Kind::bad_value,
                         "multitask table row " + std::to_string(line_no) + ", column " +
                             std::to_string(cells + 1) + ": not a finite number '" +
                             std::string(cell) + "'");
      }
      values.push_back(v);
      ++cells;
      if (end == line.size()) break;
      start = end + 1;
    }
    if (cells != arity) {
      throw ParseError(ParseError::Kind::arity,
                       "multitask table row " + std::to_string(line_no) + ": expected " +
                           std::to_string(arity) + " columns, got " + std::to_string(cells));
    }
    ++rows;
  }
  const Eigen::Map<const RowMatrix> all(values.data(), idx(rows), idx(arity));
  MultitaskTable table;
  table.inputs = all.leftCols(idx(inputs));
  table.outputs = all.rightCols(idx(outputs));
  return table;
}

MultitaskTable load_multitask_csv(const std::filesystem::path& path, char delimiter,
                                  std::size_t inputs, std::size_t outputs) {
  const auto bytes = read_file(path);
  try {
    return parse_multitask_csv(std::string(bytes.begin(), bytes.end()), delimiter, inputs,
                               outputs);
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), path.string() + ": " + e.what());
  }
}

ColumnScaler ColumnScaler::fit(const RowMatrix& m) {
  if (m.rows() == 0) throw DomainError("ColumnScaler::fit on an empty matrix");
  ColumnScaler s;
  s.mean = m.colwise().mean().transpose();
  s.scale = Vector::Ones(m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double var = (m.col(c).array() - s.mean[c]).square().mean();
    if (var > 0.0) s.scale[c] = std::sqrt(var);
  }
  return s;
}

RowMatrix ColumnScaler::apply(const RowMatrix& m) const {
  if (m.cols() != mean.size()) throw DomainError("ColumnScaler: column count mismatch");
  RowMatrix out = m;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

}  // namespace distillery
