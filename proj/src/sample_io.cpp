#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "hybridgen/sample.hpp"

namespace hg {

using nlohmann::json;

const char* task_name(Task task) { return task == Task::Normal ? "normal" : "depth"; }

Task parse_task(const std::string& name) {
  if (name == "normal") return Task::Normal;
  if (name == "depth") return Task::Depth;
  throw std::invalid_argument("unknown task '" + name + "' (expected normal or depth)");
}

std::size_t Sample::foreground() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

std::vector<double> flatten(const Sample& s) {
  std::vector<double> out;
  out.reserve(flat_size(s));
  out.insert(out.end(), s.image.data().begin(), s.image.data().end());
  out.insert(out.end(), s.truth.data().begin(), s.truth.data().end());
  return out;
}

std::size_t flat_size(const Sample& s) { return s.image.numel() + s.truth.numel(); }

namespace {

static_assert(sizeof(double) == 8);

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("sample file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

json field(const char* name, const Shape& shape) { return json{{"name", name}, {"shape", shape}}; }

}  // namespace

void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  json header;
  header["format"] = "hybridgen-sample";
  header["version"] = 1;
  header["dtype"] = "float64-le";
  header["count"] = samples.size();
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const Sample& s : samples) {
    const Shape mask_shape{s.height(), s.width()};
    entries.push_back({{"offset", offset},
                       {"fields",
                        {field("image", s.image.shape()), field("truth", s.truth.shape()), field("mask", mask_shape)}}});
    offset += 8 * (s.image.numel() + s.truth.numel() + s.mask.size());
  }
  header["index"] = entries;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Sample& s : samples) {
    for (double v : s.image.data()) put_f64(os, v);
    for (double v : s.truth.data()) put_f64(os, v);
    for (auto m : s.mask) put_f64(os, m ? 1.0 : 0.0);
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Sample> read_samples(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::uint64_t len = get_u64(is);
  if (len > (1u << 30)) throw std::runtime_error("sample header too large in " + path.string());
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("sample header truncated");
  const json header = json::parse(text);
  if (header.at("format") != "hybridgen-sample" || header.at("dtype") != "float64-le")
    throw std::runtime_error(path.string() + " is not a hybridgen sample file");

  const std::streamoff data_start = is.tellg();
  std::vector<Sample> out;
  for (const json& entry : header.at("index")) {
    is.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    const auto& fields = entry.at("fields");
    auto shape_of = [&](const char* name) {
      for (const auto& f : fields)
        if (f.at("name") == name) return f.at("shape").get<Shape>();
      throw std::runtime_error(std::string("sample entry missing field ") + name);
    };
    Sample s{Tensor(shape_of("image")), Tensor(shape_of("truth")), {}};
    for (double& v : s.image.data()) v = get_f64(is);
    for (double& v : s.truth.data()) v = get_f64(is);
    s.mask.resize(shape_numel(shape_of("mask")));
    for (auto& m : s.mask) m = get_f64(is) != 0.0 ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

Sample read_sample(const std::filesystem::path& path) {
  auto all = read_samples(path);
  if (all.size() != 1) throw std::runtime_error(path.string() + " holds " + std::to_string(all.size()) + " samples");
  return std::move(all.front());
}

void write_pgm(const std::filesystem::path& path, const Sample& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "P5\n" << s.width() << ' ' << s.height() << "\n255\n";
  for (double v : s.image.data()) os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

void write_normal_ppm(const std::filesystem::path& path, const Sample& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "P6\n" << s.width() << ' ' << s.height() << "\n255\n";
  const std::size_t channels = s.truth.shape().at(2);
  for (std::size_t px = 0; px < s.mask.size(); ++px) {
    for (std::size_t c = 0; c < 3; ++c) {
      double v = 0.0;
      if (channels == 3) {
        v = s.mask[px] ? 0.5 * (s.truth[px * 3 + c] + 1.0) : 0.0;
      } else {
        v = s.mask[px] ? 1.0 / (1.0 + s.truth[px]) : 0.0;
      }
      os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
  }
}

}  // namespace hg
