#include "mmcdfsl/io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "mmcdfsl/errors.hpp"

namespace mmcdfsl::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kTensorMagic[4] = {'M', 'M', 'T', '4'};
constexpr const char* kBundleMagic = "MMCDFSL-CKPT";

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) ensure_directory(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  return f;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

template <class T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& i, const fs::path& path) {
  T v{};
  if (!i.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError(path.string() + ": truncated file");
  return v;
}

void finish(std::ofstream& f, const fs::path& path) {
  f.flush();
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

int to_int(const std::string& s, const fs::path& path) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw IoError(path.string() + ": bad integer '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s, const fs::path& path) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw IoError(path.string() + ": bad integer '" + s + "'");
  return v;
}

ModalityKind to_kind(const std::string& s, const fs::path& path) {
  try {
    return parse_modality(s);
  } catch (const ConfigError&) {
    throw IoError(path.string() + ": unknown modality '" + s + "'");
  }
}

std::string spec_fields(const ModalitySpec& m) {
  return std::string(to_string(m.kind)) + " " + std::to_string(m.height) + " " + std::to_string(m.width) + " " +
         std::to_string(m.channels) + " " + std::to_string(m.patch_size);
}

ModalitySpec parse_spec(const std::vector<std::string>& f, std::size_t at, const fs::path& path) {
  if (f.size() < at + 5) throw IoError(path.string() + ": incomplete modality line");
  ModalitySpec m;
  m.kind = to_kind(f[at], path);
  m.height = to_int(f[at + 1], path);
  m.width = to_int(f[at + 2], path);
  m.channels = to_int(f[at + 3], path);
  m.patch_size = to_int(f[at + 4], path);
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_tensor(const fs::path& path, const Tensor4& t) {
  std::ofstream f = open_out(path);
  f.write(kTensorMagic, 4);
  for (int d : {t.frames(), t.height(), t.width(), t.channels()}) put<std::int32_t>(f, d);
  f.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  finish(f, path);
}

Tensor4 read_tensor(const fs::path& path) {
  std::ifstream f = open_in(path);
  char magic[4];
  if (!f.read(magic, 4) || !std::equal(magic, magic + 4, kTensorMagic)) throw IoError(path.string() + ": not a tensor file");
  std::int32_t dims[4];
  for (auto& d : dims) {
    d = get<std::int32_t>(f, path);
    if (d < 0) throw IoError(path.string() + ": negative dimension");
  }
  Tensor4 t(dims[0], dims[1], dims[2], dims[3]);
  if (!f.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
    throw IoError(path.string() + ": truncated tensor data");
  if (f.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes");
  return t;
}

// ---------------------------------------------------------------------------
// Dataset directory

namespace {

const char* pool_name(int p) {
  static const char* names[] = {"source", "target_unlabeled", "target_labeled"};
  return names[p];
}

}  // namespace

void save_dataset(const fs::path& dir, const Dataset& data, const std::string& config_hash) {
  ensure_directory(dir / "clips");
  std::ostringstream m;
  m << "# config_hash=" << config_hash << "\n";
  m << "format mmcdfsl-dataset/1\n";
  const std::vector<MultimodalSample>* pools[] = {&data.source, &data.target_unlabeled, &data.target_labeled};
  for (int p = 0; p < 3; ++p) {
    for (const MultimodalSample& s : *pools[p]) {
      m << "sample " << pool_name(p) << ' ' << s.id << ' ' << (s.label ? std::to_string(*s.label) : "-") << ' '
        << to_string(s.domain);
      for (const auto& [kind, clip] : s.clips) {
        const std::string file = std::to_string(s.id) + "_" + std::string(to_string(kind)) + ".t4";
        m << " | " << spec_fields(clip.modality) << ' ' << file;
        write_tensor(dir / "clips" / file, clip.frames);
      }
      m << '\n';
    }
  }
  std::ofstream f = open_out(dir / "manifest.txt");
  f << m.str();
  finish(f, dir / "manifest.txt");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.txt";
  std::ifstream f = open_in(mpath);
  Dataset data;
  std::string line;
  bool has_format = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields = split_ws(line);
    if (fields[0] == "format") {
      if (fields.size() != 2 || fields[1] != "mmcdfsl-dataset/1") throw IoError(mpath.string() + ": unsupported format");
      has_format = true;
      continue;
    }
    if (fields[0] != "sample" || fields.size() < 5) throw IoError(mpath.string() + ": malformed line '" + line + "'");
    MultimodalSample s;
    std::vector<MultimodalSample>* pool = nullptr;
    if (fields[1] == "source") pool = &data.source;
    else if (fields[1] == "target_unlabeled") pool = &data.target_unlabeled;
    else if (fields[1] == "target_labeled") pool = &data.target_labeled;
    else throw IoError(mpath.string() + ": unknown pool '" + fields[1] + "'");
    s.id = to_u64(fields[2], mpath);
    if (fields[3] != "-") s.label = to_int(fields[3], mpath);
    if (fields[4] == "source") s.domain = Domain::Source;
    else if (fields[4] == "target") s.domain = Domain::Target;
    else throw IoError(mpath.string() + ": unknown domain '" + fields[4] + "'");
    for (std::size_t at = 5; at < fields.size(); at += 7) {
      if (fields[at] != "|" || at + 7 > fields.size()) throw IoError(mpath.string() + ": malformed clip entry");
      Clip c;
      c.modality = parse_spec(fields, at + 1, mpath);
      c.frames = read_tensor(dir / "clips" / fields[at + 6]);
      if (c.frames.height() != c.modality.height || c.frames.width() != c.modality.width ||
          c.frames.channels() != c.modality.channels)
        throw IoError(fields[at + 6] + ": tensor shape disagrees with manifest");
      s.clips.emplace(c.modality.kind, std::move(c));
    }
    pool->push_back(std::move(s));
  }
  if (!has_format) throw IoError(mpath.string() + ": missing format line");
  return data;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_bundle(const fs::path& path, const ModelBundle& bundle) {
  std::ostringstream h;
  h << kBundleMagic << '\n' << "version " << ModelBundle::kVersion << '\n';
  const EncoderConfig& c = bundle.config;
  h << "config " << c.embed_dim << ' ' << c.depth << ' ' << c.heads << ' ' << c.mlp_ratio << ' ' << c.tubelet_size
    << ' ' << c.decoder_dim << ' ' << c.decoder_depth << ' ' << c.decoder_heads << '\n';
  h << "frames " << bundle.frames << '\n';
  for (const auto& [kind, m] : bundle.teachers)
    h << "teacher " << spec_fields(m.encoder.modality) << ' ' << m.classifier.n_classes() << '\n';
  if (bundle.student) {
    h << "student " << spec_fields(bundle.student->encoder.modality);
    for (const auto& [kind, p] : bundle.student->projections) h << ' ' << to_string(kind);
    h << '\n';
  }
  for (const auto& [k, v] : bundle.metadata) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw IoError("metadata entries must be single-line and keys must not contain spaces");
    h << "meta " << k << ' ' << v << '\n';
  }
  h << "end\n";

  std::ofstream f = open_out(path);
  f << h.str();
  ModelBundle& b = const_cast<ModelBundle&>(bundle);
  const ParamList params = params_of(b);
  put<std::uint64_t>(f, params.size());
  for (const NamedParam& p : params) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(f, static_cast<std::uint64_t>(p.value->rows()));
    put<std::uint64_t>(f, static_cast<std::uint64_t>(p.value->cols()));
    f.write(reinterpret_cast<const char*>(p.value->data()),
            static_cast<std::streamsize>(p.value->size() * static_cast<Eigen::Index>(sizeof(double))));
  }
  finish(f, path);
}

ModelBundle load_bundle(const fs::path& path) {
  std::ifstream f = open_in(path);
  std::string line;
  if (!std::getline(f, line) || line != kBundleMagic) throw IoError(path.string() + ": not a checkpoint");

  ModelBundle b;
  struct TeacherLine {
    ModalitySpec spec;
    int n_classes;
  };
  std::vector<TeacherLine> teachers;
  std::optional<ModalitySpec> student_spec;
  std::vector<ModalityKind> projections;
  bool ended = false, versioned = false;
  while (!ended && std::getline(f, line)) {
    const std::vector<std::string> t = split_ws(line);
    if (t.empty()) continue;
    if (t[0] == "version") {
      if (t.size() != 2 || t[1] != ModelBundle::kVersion)
        throw IoError(path.string() + ": unsupported checkpoint version");
      versioned = true;
    } else if (t[0] == "config" && t.size() == 9) {
      EncoderConfig& c = b.config;
      int* dst[] = {&c.embed_dim, &c.depth, &c.heads, &c.mlp_ratio, &c.tubelet_size,
                    &c.decoder_dim, &c.decoder_depth, &c.decoder_heads};
      for (int i = 0; i < 8; ++i) *dst[i] = to_int(t[static_cast<std::size_t>(i) + 1], path);
    } else if (t[0] == "frames" && t.size() == 2) {
      b.frames = to_int(t[1], path);
    } else if (t[0] == "teacher" && t.size() == 7) {
      teachers.push_back({parse_spec(t, 1, path), to_int(t[6], path)});
    } else if (t[0] == "student" && t.size() >= 6) {
      student_spec = parse_spec(t, 1, path);
      for (std::size_t i = 6; i < t.size(); ++i) projections.push_back(to_kind(t[i], path));
    } else if (t[0] == "meta" && t.size() >= 2) {
      const std::size_t at = line.find(t[1]) + t[1].size();
      b.metadata[t[1]] = at < line.size() ? line.substr(at + 1) : "";
    } else if (t[0] == "end") {
      ended = true;
    } else {
      throw IoError(path.string() + ": unrecognized header line '" + line + "'");
    }
  }
  if (!ended || !versioned) throw IoError(path.string() + ": incomplete header");
  try {
    b.config.validate();
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }

  // Build the announced structure, then fill it tensor by tensor.
  for (const TeacherLine& tl : teachers)
    b.teachers.emplace(tl.spec.kind, init_modality_model(b.config, tl.spec, b.frames, tl.n_classes, 0));
  if (student_spec) {
    Rng rng(0);
    StudentModel s;
    s.encoder = init_encoder(b.config, *student_spec, b.frames, rng);
    for (ModalityKind k : projections) s.projections.emplace(k, init_projection(b.config, rng));
    b.student = std::move(s);
  }
  ParamList params = params_of(b);
  std::map<std::string, Mat*> slots;
  for (const NamedParam& p : params) slots.emplace(p.name, p.value);

  const auto count = get<std::uint64_t>(f, path);
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(f, path);
    if (len > 4096) throw IoError(path.string() + ": corrupt tensor name");
    std::string name(len, '\0');
    if (!f.read(name.data(), len)) throw IoError(path.string() + ": truncated file");
    const auto rows = get<std::uint64_t>(f, path);
    const auto cols = get<std::uint64_t>(f, path);
    const auto it = slots.find(name);
    if (it == slots.end()) throw IoError(path.string() + ": unexpected tensor '" + name + "'");
    if (!seen.insert(name).second) throw IoError(path.string() + ": duplicate tensor '" + name + "'");
    Mat& dst = *it->second;
    if (static_cast<std::uint64_t>(dst.rows()) != rows || static_cast<std::uint64_t>(dst.cols()) != cols)
      throw IoError(path.string() + ": tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", expected " + std::to_string(dst.rows()) + "x" +
                    std::to_string(dst.cols()));
    if (!f.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(rows * cols * sizeof(double))))
      throw IoError(path.string() + ": truncated tensor '" + name + "'");
  }
  if (seen.size() != slots.size()) {
    for (const auto& [name, _] : slots)
      if (!seen.contains(name)) throw IoError(path.string() + ": missing tensor '" + name + "'");
  }
  if (f.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes");
  return b;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_csv(const fs::path& path, const std::string& config_hash, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream o;
  o << "# config_hash=" << config_hash << '\n';
  auto emit = [&o](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) o << (i ? "," : "") << cells[i];
    o << '\n';
  };
  emit(header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ContractError("write_csv: row width differs from header");
    emit(r);
  }
  std::ofstream f = open_out(path);
  f << o.str();
  finish(f, path);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream f = open_in(path);
  CsvTable t;
  auto cells = [](const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      const std::size_t c = line.find(',', start);
      out.push_back(line.substr(start, c == std::string::npos ? std::string::npos : c - start));
      if (c == std::string::npos) break;
      start = c + 1;
    }
    return out;
  };
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (line.rfind("# config_hash=", 0) == 0) {
      t.config_hash = line.substr(14);
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      t.header = cells(line);
      have_header = true;
    } else {
      t.rows.push_back(cells(line));
    }
  }
  return t;
}

}  // namespace mmcdfsl::io
