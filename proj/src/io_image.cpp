#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "memfield/io.hpp"

namespace memfield::io {

namespace {

constexpr int kMaxVal = 65535;

std::uint16_t to_u16(double v) {
  return static_cast<std::uint16_t>(
      std::lround(std::clamp(v, 0.0, 1.0) * kMaxVal));
}

void put_u16be(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  std::string comment;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& raw, const std::string& path) {
  PnmHeader h;
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < raw.size()) {
      if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
        ++pos;
      } else if (raw[pos] == '#') {
        std::size_t eol = raw.find('\n', pos);
        if (eol == std::string::npos) eol = raw.size();
        if (!h.comment.empty()) h.comment.push_back('\n');
        h.comment += raw.substr(pos + 1, eol - pos - 1);
        while (!h.comment.empty() && h.comment.front() == ' ')
          h.comment.erase(h.comment.begin());
        pos = eol;
      } else {
        const std::size_t start = pos;
        while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos])) &&
               raw[pos] != '#')
          ++pos;
        return raw.substr(start, pos - start);
      }
    }
    throw DataError("truncated header in " + path);
  };
  h.magic = next_token();
  h.width = std::stoi(next_token());
  h.height = std::stoi(next_token());
  h.maxval = std::stoi(next_token());
  if (pos >= raw.size() || !std::isspace(static_cast<unsigned char>(raw[pos])))
    throw DataError("malformed header in " + path);
  h.data_offset = pos + 1;
  if (h.width < 1 || h.height < 1 || h.maxval != kMaxVal)
    throw DataError("unsupported image header in " + path);
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::uint16_t get_u16be(const std::string& raw, std::size_t pos) {
  return static_cast<std::uint16_t>(
      (static_cast<unsigned char>(raw[pos]) << 8) |
      static_cast<unsigned char>(raw[pos + 1]));
}

}  // namespace

void write_ppm16(const std::string& path, const render::Image& img,
                 const std::string& comment) {
  std::string out = "P6\n";
  if (!comment.empty()) out += "# " + comment + "\n";
  out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
         std::to_string(kMaxVal) + "\n";
  out.reserve(out.size() + static_cast<std::size_t>(img.width) * img.height * 6);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) put_u16be(out, to_u16(img.at(x, y, c)));
  atomic_write(path, out);
}

render::Image read_ppm16(const std::string& path, std::string* comment) {
  const std::string raw = read_file(path);
  const PnmHeader h = parse_pnm_header(raw, path);
  if (h.magic != "P6") throw DataError("not a P6 file: " + path);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 6;
  if (raw.size() < h.data_offset + need) throw DataError("truncated image: " + path);
  render::Image img;
  img.width = h.width;
  img.height = h.height;
  img.rgb.assign(static_cast<std::size_t>(h.width) * h.height * 3, 0.0);
  img.weights.assign(static_cast<std::size_t>(h.width) * h.height, 0.0);
  std::size_t pos = h.data_offset;
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = get_u16be(raw, pos) / static_cast<double>(kMaxVal);
        pos += 2;
      }
  if (comment) *comment = h.comment;
  return img;
}

void write_pgm16(const std::string& path, const Eigen::MatrixXd& gray,
                 const std::string& comment) {
  std::string out = "P5\n";
  if (!comment.empty()) out += "# " + comment + "\n";
  out += std::to_string(gray.cols()) + " " + std::to_string(gray.rows()) + "\n" +
         std::to_string(kMaxVal) + "\n";
  for (Eigen::Index y = 0; y < gray.rows(); ++y)
    for (Eigen::Index x = 0; x < gray.cols(); ++x)
      put_u16be(out, to_u16(gray(y, x)));
  atomic_write(path, out);
}

Eigen::MatrixXd read_pgm16(const std::string& path, std::string* comment) {
  const std::string raw = read_file(path);
  const PnmHeader h = parse_pnm_header(raw, path);
  if (h.magic != "P5") throw DataError("not a P5 file: " + path);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 2;
  if (raw.size() < h.data_offset + need) throw DataError("truncated image: " + path);
  Eigen::MatrixXd gray(h.height, h.width);
  std::size_t pos = h.data_offset;
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x) {
      gray(y, x) = get_u16be(raw, pos) / static_cast<double>(kMaxVal);
      pos += 2;
    }
  if (comment) *comment = h.comment;
  return gray;
}

}  // namespace memfield::io
