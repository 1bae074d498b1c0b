#include "vivo/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

namespace vivo {

namespace {

constexpr const char* kMagic = "vivo-checkpoint v1";

struct ArrayEntry {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  uint64_t offset = 0;
};

void write_array(std::string& payload, std::vector<ArrayEntry>& entries,
                 const std::string& name, const Matrix& m) {
  ArrayEntry e{name, m.rows(), m.cols(), payload.size()};
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      payload.append(reinterpret_cast<const char*>(&v), sizeof(double));
    }
  }
  entries.push_back(std::move(e));
}

Matrix read_array(const std::string& payload, const ArrayEntry& e) {
  const uint64_t bytes = static_cast<uint64_t>(e.rows) * e.cols * sizeof(double);
  if (e.offset + bytes > payload.size()) {
    throw Error(ErrorKind::CorruptCheckpoint,
                "array '" + e.name + "' extends past the payload");
  }
  Matrix m(e.rows, e.cols);
  const char* src = payload.data() + e.offset;
  for (Eigen::Index i = 0; i < e.rows; ++i) {
    for (Eigen::Index j = 0; j < e.cols; ++j) {
      double v;
      std::memcpy(&v, src, sizeof(double));
      src += sizeof(double);
      m(i, j) = v;
    }
  }
  return m;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string payload;
  std::vector<ArrayEntry> entries;
  visit_params(ckpt.params, [&](const std::string& name, auto& arr) {
    write_array(payload, entries, name, Matrix(arr));
  });
  for (const auto& [name, m] : ckpt.extras) {
    write_array(payload, entries, name, m);
  }

  std::ostringstream head;
  const EncoderConfig& c = ckpt.config;
  head << kMagic << '\n';
  head << "config layers " << c.layers << '\n';
  head << "config hidden " << c.hidden << '\n';
  head << "config heads " << c.heads << '\n';
  head << "config ff_dim " << c.ff_dim << '\n';
  head << "config vocab_size " << c.vocab_size << '\n';
  head << "config max_positions " << c.max_positions << '\n';
  head << "config n_segments " << c.n_segments << '\n';
  head << "config d_region " << c.d_region << '\n';
  head << "config dropout " << format_double(c.dropout) << '\n';
  head << "config tie_head " << (c.tie_head ? 1 : 0) << '\n';
  for (const auto& e : entries) {
    head << "array " << e.name << ' ' << e.rows << ' ' << e.cols << ' '
         << e.offset << '\n';
  }
  for (const auto& [name, v] : ckpt.scalars) {
    head << "scalar " << name << ' ' << format_double(v) << '\n';
  }
  head << "payload " << payload.size() << '\n';
  head << "end\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp);
    out << head.str();
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error(ErrorKind::IoError, "short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open checkpoint " + path);

  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw Error(ErrorKind::CorruptCheckpoint, "bad magic in " + path);
  }

  Checkpoint ckpt;
  std::vector<ArrayEntry> entries;
  uint64_t payload_size = 0;
  bool saw_end = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end") {
      saw_end = true;
      break;
    } else if (kind == "config") {
      std::string key;
      ls >> key;
      auto& c = ckpt.config;
      if (key == "layers") ls >> c.layers;
      else if (key == "hidden") ls >> c.hidden;
      else if (key == "heads") ls >> c.heads;
      else if (key == "ff_dim") ls >> c.ff_dim;
      else if (key == "vocab_size") ls >> c.vocab_size;
      else if (key == "max_positions") ls >> c.max_positions;
      else if (key == "n_segments") ls >> c.n_segments;
      else if (key == "d_region") ls >> c.d_region;
      else if (key == "dropout") ls >> c.dropout;
      else if (key == "tie_head") {
        int v = 0;
        ls >> v;
        c.tie_head = v != 0;
      } else {
        throw Error(ErrorKind::CorruptCheckpoint, "unknown config key " + key);
      }
    } else if (kind == "array") {
      ArrayEntry e;
      ls >> e.name >> e.rows >> e.cols >> e.offset;
      if (!ls || e.rows < 0 || e.cols < 0) {
        throw Error(ErrorKind::CorruptCheckpoint, "bad array line: " + line);
      }
      entries.push_back(std::move(e));
    } else if (kind == "scalar") {
      std::string name;
      double v;
      ls >> name >> v;
      if (!ls) throw Error(ErrorKind::CorruptCheckpoint, "bad scalar line: " + line);
      ckpt.scalars[name] = v;
    } else if (kind == "payload") {
      ls >> payload_size;
    } else {
      throw Error(ErrorKind::CorruptCheckpoint, "unknown manifest line: " + line);
    }
  }
  if (!saw_end) {
    throw Error(ErrorKind::CorruptCheckpoint, "manifest truncated in " + path);
  }

  std::string payload(payload_size, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload_size));
  if (static_cast<uint64_t>(in.gcount()) != payload_size) {
    throw Error(ErrorKind::CorruptCheckpoint,
                "payload truncated: expected " + std::to_string(payload_size) +
                    " bytes in " + path);
  }

  std::map<std::string, const ArrayEntry*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) {
      throw Error(ErrorKind::CorruptCheckpoint, "duplicate array " + e.name);
    }
  }

  try {
    ckpt.params = zero_parameters(ckpt.config);
  } catch (const Error& e) {
    throw Error(ErrorKind::CorruptCheckpoint,
                std::string("invalid stored config: ") + e.what());
  }
  visit_params(ckpt.params, [&](const std::string& name, auto& arr) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw Error(ErrorKind::CorruptCheckpoint, "missing parameter array " + name);
    }
    const ArrayEntry& e = *it->second;
    if (e.rows != arr.rows() || e.cols != arr.cols()) {
      throw Error(ErrorKind::CorruptCheckpoint,
                  "shape mismatch for " + name + ": file has " +
                      std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                      ", config requires " + std::to_string(arr.rows()) + "x" +
                      std::to_string(arr.cols()));
    }
    arr = read_array(payload, e);
    by_name.erase(it);
  });
  for (const auto& [name, e] : by_name) {
    ckpt.extras[name] = read_array(payload, *e);
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path,
                           const EncoderConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config == expected)) {
    std::ostringstream msg;
    msg << "checkpoint " << path << " was saved with a different encoder"
        << " configuration (file: layers=" << ckpt.config.layers
        << " hidden=" << ckpt.config.hidden << " heads=" << ckpt.config.heads
        << " ff_dim=" << ckpt.config.ff_dim
        << " vocab=" << ckpt.config.vocab_size
        << " max_positions=" << ckpt.config.max_positions
        << " d_region=" << ckpt.config.d_region
        << "; expected: layers=" << expected.layers
        << " hidden=" << expected.hidden << " heads=" << expected.heads
        << " ff_dim=" << expected.ff_dim << " vocab=" << expected.vocab_size
        << " max_positions=" << expected.max_positions
        << " d_region=" << expected.d_region << ")";
    throw Error(ErrorKind::CorruptCheckpoint, msg.str());
  }
  return ckpt;
}

}  // namespace vivo
