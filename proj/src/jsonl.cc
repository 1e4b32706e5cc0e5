#include "epigeo/jsonl.h"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace epigeo {

std::string CanonicalDump(const nlohmann::json& value) { return value.dump(); }

std::string Sha256Hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string Sha256File(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Sha256Hex(bytes);
}

std::string Digest(const nlohmann::json& value) {
  return Sha256Hex(CanonicalDump(value)).substr(0, 16);
}

JsonlDocument ParseJsonl(std::string_view text) {
  JsonlDocument doc;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      if (line[0] == '#') {
        if (!doc.header) doc.header = nlohmann::json::parse(line.substr(1));
        continue;
      }
      doc.records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("JSONL line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return doc;
}

JsonlDocument ReadJsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return ParseJsonl(text);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string FormatJsonl(const JsonlDocument& doc) {
  std::string out;
  if (doc.header) out += "# " + CanonicalDump(*doc.header) + "\n";
  for (const auto& record : doc.records) out += CanonicalDump(record) + "\n";
  return out;
}

void WriteText(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void WriteJsonl(const std::filesystem::path& path, const JsonlDocument& doc) {
  WriteText(path, FormatJsonl(doc));
}

}  // namespace epigeo
