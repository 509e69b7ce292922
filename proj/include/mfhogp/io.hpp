#pragma once

// On-disk formats.
//
// Dataset directory: manifest.json plus x_<i>.f64 / y_<i>.f64 per training
// level (i = 1..F) and x_test.f64 / y_test.f64, each a flat little-endian
// row-major float64 array.
//
// Checkpoint: "MFHG1", u64 little-endian header length, JSON header, then the
// float64 payload of every array listed in header["arrays"], in order.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "mfhogp/mfmodel.hpp"
#include "mfhogp/pdegen.hpp"

namespace mfhogp {

using Json = nlohmann::json;

namespace detail {

inline void to_little_endian(char* bytes, std::size_t count, std::size_t width) {
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < count; ++i) std::reverse(bytes + i * width, bytes + (i + 1) * width);
}

inline void write_doubles(std::ostream& out, const double* p, std::size_t n) {
  std::vector<char> buf(n * sizeof(double));
  std::memcpy(buf.data(), p, buf.size());
  to_little_endian(buf.data(), n, sizeof(double));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void read_doubles(std::istream& in, double* p, std::size_t n, const std::string& what) {
  std::vector<char> buf(n * sizeof(double));
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<std::size_t>(in.gcount()) == buf.size(), ErrorCode::IoFailure, what + ": truncated float64 payload");
  to_little_endian(buf.data(), n, sizeof(double));
  std::memcpy(p, buf.data(), buf.size());
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoFailure, "cannot read " + path.string());
  return in;
}

}  // namespace detail

inline void write_matrix_f64(const std::filesystem::path& path, const Matrix& m) {
  auto out = detail::open_out(path);
  detail::write_doubles(out, m.data(), static_cast<std::size_t>(m.size()));
  require(out.good(), ErrorCode::IoFailure, "failed writing " + path.string());
}

inline Matrix read_matrix_f64(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  auto in = detail::open_in(path);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  detail::read_doubles(in, m.data(), rows * cols, path.string());
  in.peek();
  require(in.eof(), ErrorCode::IoFailure, path.string() + " is longer than its manifest shape");
  return m;
}

inline std::string read_text(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = detail::open_out(path);
  out << text;
  require(out.good(), ErrorCode::IoFailure, "failed writing " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    fail(ErrorCode::IoFailure, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets

inline void write_dataset(const std::filesystem::path& dir, const GeneratedData& g, const std::string& preset = "") {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  Json m;
  m["format"] = "mfhogp-dataset";
  m["version"] = 1;
  m["equation"] = equation_name(g.spec.equation);
  m["preset"] = preset;
  m["seed"] = g.seed;
  m["fidelities"] = g.train.fidelity_count();
  m["input_dim"] = g.train.input_dim();
  m["output_dim"] = g.train.output_dim();
  m["grid"] = {g.spec.out_rows, g.spec.out_cols};
  m["meshes"] = g.spec.meshes;
  m["horizon"] = g.spec.horizon;
  m["input_ranges"] = Json::array();
  for (const auto& [lo, hi] : g.spec.input_ranges) m["input_ranges"].push_back({lo, hi});
  m["counts"] = Json::array();
  m["index_maps"] = Json::array();
  for (std::size_t i = 0; i < g.train.fidelity_count(); ++i) {
    const auto& l = g.train.levels[i];
    m["counts"].push_back(l.inputs.rows());
    m["index_maps"].push_back(l.parent_index);
    write_matrix_f64(dir / ("x_" + std::to_string(i + 1) + ".f64"), l.inputs);
    write_matrix_f64(dir / ("y_" + std::to_string(i + 1) + ".f64"), l.outputs);
  }
  m["test_fidelity"] = g.test_fidelity;
  m["test_count"] = g.test.inputs.rows();
  write_matrix_f64(dir / "x_test.f64", g.test.inputs);
  write_matrix_f64(dir / "y_test.f64", g.test.outputs);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

inline GeneratedData read_dataset(const std::filesystem::path& dir) {
  const Json m = read_json(dir / "manifest.json");
  try {
    require(m.at("format") == "mfhogp-dataset", ErrorCode::IoFailure, dir.string() + " is not a dataset directory");
    GeneratedData g;
    g.spec.equation = parse_equation(m.at("equation"));
    g.spec.meshes = m.at("meshes").get<std::vector<std::size_t>>();
    g.spec.out_rows = m.at("grid").at(0);
    g.spec.out_cols = m.at("grid").at(1);
    g.spec.horizon = m.at("horizon");
    for (const auto& r : m.at("input_ranges")) g.spec.input_ranges.emplace_back(r.at(0), r.at(1));
    g.seed = m.at("seed");
    g.test_fidelity = m.at("test_fidelity");
    const std::size_t s = m.at("input_dim"), d = m.at("output_dim");
    const std::size_t f = m.at("fidelities");
    for (std::size_t i = 0; i < f; ++i) {
      const std::size_t n = m.at("counts").at(i);
      FidelityData l;
      l.inputs = read_matrix_f64(dir / ("x_" + std::to_string(i + 1) + ".f64"), n, s);
      l.outputs = read_matrix_f64(dir / ("y_" + std::to_string(i + 1) + ".f64"), n, d);
      l.parent_index = m.at("index_maps").at(i).get<std::vector<std::size_t>>();
      g.train.levels.push_back(std::move(l));
    }
    const std::size_t t = m.at("test_count");
    g.test.inputs = read_matrix_f64(dir / "x_test.f64", t, s);
    g.test.outputs = read_matrix_f64(dir / "y_test.f64", t, d);
    g.train.validate();
    return g;
  } catch (const Json::exception& e) {
    fail(ErrorCode::IoFailure, dir.string() + "/manifest.json: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container

inline constexpr char kCheckpointMagic[5] = {'M', 'F', 'H', 'G', '1'};

struct NamedArray {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> data;
};

inline void write_container(const std::filesystem::path& path, Json header, const std::vector<NamedArray>& arrays) {
  header["arrays"] = Json::array();
  for (const auto& a : arrays) {
    require(a.data.size() == static_cast<std::size_t>(a.rows * a.cols), ErrorCode::DimensionMismatch,
            "array " + a.name + " size does not match its shape");
    header["arrays"].push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
  }
  const std::string text = header.dump();
  auto out = detail::open_out(path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint64_t len = text.size();
  char lenbuf[8];
  std::memcpy(lenbuf, &len, 8);
  detail::to_little_endian(lenbuf, 1, 8);
  out.write(lenbuf, 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays) detail::write_doubles(out, a.data.data(), a.data.size());
  require(out.good(), ErrorCode::IoFailure, "failed writing " + path.string());
}

inline std::pair<Json, std::vector<NamedArray>> read_container(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  char magic[5] = {};
  in.read(magic, 5);
  require(in.gcount() == 5 && std::memcmp(magic, kCheckpointMagic, 5) == 0, ErrorCode::IoFailure,
          path.string() + " is not an MFHG1 checkpoint");
  char lenbuf[8];
  in.read(lenbuf, 8);
  require(in.gcount() == 8, ErrorCode::IoFailure, path.string() + ": truncated header length");
  detail::to_little_endian(lenbuf, 1, 8);
  std::uint64_t len = 0;
  std::memcpy(&len, lenbuf, 8);
  require(len < (1ULL << 32), ErrorCode::IoFailure, path.string() + ": implausible header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  require(static_cast<std::uint64_t>(in.gcount()) == len, ErrorCode::IoFailure, path.string() + ": truncated header");
  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::IoFailure, path.string() + ": " + e.what());
  }
  std::vector<NamedArray> arrays;
  for (const auto& a : header.at("arrays")) {
    NamedArray na{a.at("name"), a.at("rows"), a.at("cols"), {}};
    na.data.resize(static_cast<std::size_t>(na.rows * na.cols));
    detail::read_doubles(in, na.data.data(), na.data.size(), path.string() + ":" + na.name);
    arrays.push_back(std::move(na));
  }
  return {header, arrays};
}

// ---------------------------------------------------------------------------
// Model checkpoints

inline void save_model(const std::filesystem::path& path, const ModelState& model, Json extra = Json::object()) {
  Json h;
  h["format"] = "mfhogp-model";
  h["version"] = 1;
  h["bases_per_level"] = model.bases_per_level;
  h["factor_count"] = model.factor_count;
  h["output_dim"] = model.output_dim;
  h["input_dim"] = model.input_dim;
  h["alpha"] = model.alpha;
  h["jitter"] = model.jitter;
  h["levels"] = Json::array();
  for (const auto& l : model.levels)
    h["levels"].push_back({{"bases_kernel", std::holds_alternative<DeltaKernel>(l.bases_kernel) ? "delta" : "rbf"}});
  h["extra"] = std::move(extra);
  std::vector<NamedArray> arrays;
  for_each_parameter(model, [&](const std::string& name, const double* p, Eigen::Index r, Eigen::Index c) {
    arrays.push_back({name, r, c, std::vector<double>(p, p + r * c)});
  });
  write_container(path, h, arrays);
}

struct LoadedModel {
  ModelState model;
  Json extra;
};

inline LoadedModel load_model(const std::filesystem::path& path) {
  auto [h, arrays] = read_container(path);
  try {
    require(h.at("format") == "mfhogp-model", ErrorCode::IoFailure, path.string() + " does not hold a model");
    ModelState m;
    m.bases_per_level = h.at("bases_per_level");
    m.factor_count = h.at("factor_count");
    m.output_dim = h.at("output_dim");
    m.input_dim = h.at("input_dim");
    m.alpha = h.at("alpha");
    m.jitter = h.at("jitter");
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    auto shape = [&](const std::string& name) -> const NamedArray& {
      const auto it = by_name.find(name);
      require(it != by_name.end(), ErrorCode::IoFailure, path.string() + ": missing array " + name);
      return *it->second;
    };
    // size every block from the stored shapes, then copy through the visitor
    for (std::size_t i = 0; i < h.at("levels").size(); ++i) {
      const std::string p = "level" + std::to_string(i + 1) + "/";
      FidelityLevel l;
      l.block.output_dim = m.output_dim;
      for (std::size_t r = 0; r < m.factor_count; ++r) {
        const auto& a = shape(p + "bases/mode" + std::to_string(r));
        l.block.modes.emplace_back(a.rows, a.cols);
      }
      l.input_kernel.log_lengthscales.resize(shape(p + "input_kernel/log_lengthscales").rows);
      if (h["levels"][i].at("bases_kernel") == "delta") l.bases_kernel = DeltaKernel{};
      else {
        BasesKernel bk;
        bk.inner.log_lengthscales.resize(shape(p + "bases_kernel/log_lengthscales").rows);
        l.bases_kernel = bk;
      }
      const auto& mean = shape(p + "posterior/mean");
      l.mean.resize(mean.rows, mean.cols);
      l.row_factor_raw.resize(mean.rows, mean.rows);
      l.col_factor_raw.resize(mean.cols, mean.cols);
      m.levels.push_back(std::move(l));
    }
    for_each_parameter(m, [&](const std::string& name, double* dst, Eigen::Index r, Eigen::Index c) {
      const auto& a = shape(name);
      require(a.rows == r && a.cols == c, ErrorCode::IoFailure, path.string() + ": array " + name + " has the wrong shape");
      std::copy(a.data.begin(), a.data.end(), dst);
    });
    return {std::move(m), h.at("extra")};
  } catch (const Json::exception& e) {
    fail(ErrorCode::IoFailure, path.string() + ": " + e.what());
  }
}

}  // namespace mfhogp
