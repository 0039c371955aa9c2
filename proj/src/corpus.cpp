#include "dietcl/corpus.hpp"

#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

namespace dietcl {

namespace {

constexpr char kPackMagic[8] = {'D', 'C', 'L', 'P', 'A', 'C', 'K', '1'};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

bool is_absent(const std::string& field) { return field.empty() || field == "-"; }

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

void read_token(std::istream& in, std::string& token) {
  token.clear();
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (!std::isspace(static_cast<unsigned char>(c))) break;
  }
  if (!in) return;
  token.push_back(c);
  while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) token.push_back(c);
}

}  // namespace

std::size_t ImageStore::add(std::span<const float> image) {
  if (image.size() != shape_.size()) {
    throw InputError("image has " + std::to_string(image.size()) + " values, store expects " +
                     to_string(shape_));
  }
  pixels_.insert(pixels_.end(), image.begin(), image.end());
  return size() - 1;
}

std::span<const float> ImageStore::image(std::size_t index) const {
  if (index >= size()) throw InputError("image index " + std::to_string(index) + " out of range");
  return {pixels_.data() + index * shape_.size(), shape_.size()};
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IngestionError("cannot open manifest " + manifest.string());
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() < 3 || fields.size() > 4 || fields[0].empty() || fields[1].empty()) {
      throw IngestionError(manifest.string() + ":" + std::to_string(line_no) +
                           ": expected id, path, class[, timestamp]");
    }
    ManifestRecord rec{fields[0], fields[1], std::nullopt, std::nullopt};
    try {
      if (!is_absent(fields[2])) {
        std::size_t used = 0;
        const int label = std::stoi(fields[2], &used);
        if (used != fields[2].size() || label < 0) throw std::invalid_argument("label");
        rec.label = label;
      }
      if (fields.size() == 4 && !is_absent(fields[3])) {
        std::size_t used = 0;
        rec.timestamp = std::stod(fields[3], &used);
        if (used != fields[3].size()) throw std::invalid_argument("timestamp");
      }
    } catch (const std::exception&) {
      throw IngestionError(manifest.string() + ":" + std::to_string(line_no) +
                           ": malformed class or timestamp");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestRecord> records) {
  std::ofstream out(manifest);
  if (!out) throw IngestionError("cannot write manifest " + manifest.string());
  out << "# id\tpath\tclass\ttimestamp\n";
  out.precision(17);
  for (const auto& rec : records) {
    out << rec.id << '\t' << rec.path << '\t';
    if (rec.label) out << *rec.label; else out << '-';
    if (rec.timestamp) out << '\t' << *rec.timestamp;
    out << '\n';
  }
}

void write_image_pack(const std::filesystem::path& file, const ImageStore& images) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IngestionError("cannot write image pack " + file.string());
  out.write(kPackMagic, sizeof(kPackMagic));
  const std::uint32_t header[4] = {static_cast<std::uint32_t>(images.size()),
                                   static_cast<std::uint32_t>(images.shape().height),
                                   static_cast<std::uint32_t>(images.shape().width),
                                   static_cast<std::uint32_t>(images.shape().channels)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto img = images.image(i);
    out.write(reinterpret_cast<const char*>(img.data()),
              static_cast<std::streamsize>(img.size() * sizeof(float)));
  }
}

ImageStore read_image_pack(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open image pack " + file.string());
  char magic[8];
  std::uint32_t header[4];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, kPackMagic, sizeof(magic)) != 0) {
    throw IngestionError(file.string() + ": not an image pack");
  }
  ImageStore store(ImageShape{static_cast<int>(header[1]), static_cast<int>(header[2]),
                              static_cast<int>(header[3])});
  std::vector<float> buf(store.shape().size());
  for (std::uint32_t i = 0; i < header[0]; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IngestionError(file.string() + ": truncated image pack");
    store.add(buf);
  }
  return store;
}

std::vector<float> read_netpbm(const std::filesystem::path& file, ImageShape& shape) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + file.string());
  std::string magic, w, h, maxval;
  read_token(in, magic);
  read_token(in, w);
  read_token(in, h);
  read_token(in, maxval);
  if ((magic != "P5" && magic != "P6") || w.empty() || h.empty() || maxval.empty()) {
    throw IngestionError(file.string() + ": unsupported image (need binary P5/P6)");
  }
  const int maxv = std::stoi(maxval);
  if (maxv <= 0 || maxv > 255) throw IngestionError(file.string() + ": maxval must be 1..255");
  shape = ImageShape{std::stoi(h), std::stoi(w), magic == "P5" ? 1 : 3};
  std::vector<unsigned char> raw(shape.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IngestionError(file.string() + ": truncated pixel data");
  std::vector<float> pixels(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxv);
  return pixels;
}

Corpus load_corpus(const std::filesystem::path& manifest) {
  const auto records = read_manifest(manifest);
  if (records.empty()) throw IngestionError("manifest " + manifest.string() + " lists no examples");
  const auto base = manifest.parent_path();

  Corpus corpus;
  std::map<std::string, ImageStore> packs;
  std::unordered_set<std::string> ids;
  bool have_shape = false;
  for (const auto& rec : records) {
    if (!ids.insert(rec.id).second) throw IngestionError("duplicate example id " + rec.id);
    std::vector<float> pixels;
    ImageShape shape;
    const auto hash = rec.path.rfind('#');
    if (hash != std::string::npos) {
      const auto pack_path = (base / rec.path.substr(0, hash)).string();
      auto it = packs.find(pack_path);
      if (it == packs.end()) it = packs.emplace(pack_path, read_image_pack(pack_path)).first;
      std::size_t index = 0;
      try {
        index = std::stoul(rec.path.substr(hash + 1));
      } catch (const std::exception&) {
        throw IngestionError("bad pack index in " + rec.path);
      }
      if (index >= it->second.size()) throw IngestionError("pack index out of range in " + rec.path);
      shape = it->second.shape();
      const auto img = it->second.image(index);
      pixels.assign(img.begin(), img.end());
    } else {
      pixels = read_netpbm(base / rec.path, shape);
    }
    if (!have_shape) {
      corpus.shape = shape;
      corpus.images = ImageStore(shape);
      have_shape = true;
    } else if (!(shape == corpus.shape)) {
      throw IngestionError("image " + rec.id + " has shape " + to_string(shape) + ", corpus uses " +
                           to_string(corpus.shape));
    }
    Example ex;
    ex.id = rec.id;
    ex.image = corpus.images.add(pixels);
    ex.label = rec.label;
    ex.timestamp = rec.timestamp;
    if (rec.label) corpus.num_classes = std::max(corpus.num_classes, *rec.label + 1);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

}  // namespace dietcl
