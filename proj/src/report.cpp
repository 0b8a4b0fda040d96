#include "fgsam/report.hpp"

#include "fgsam/common.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

namespace fgsam::report {

std::string format_double(double value) {
  if (std::isnan(value)) return "";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  require(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx.get(), header.data(), header.size()) == 1 &&
              EVP_DigestUpdate(ctx.get(), content.data(), content.size()) == 1 &&
              EVP_DigestFinal_ex(ctx.get(), digest, &length) == 1,
          "sha1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), "cannot open " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& file, std::string_view content) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + file.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  require(static_cast<bool>(out), "write failed: " + file.string());
}

void CsvTable::add_row(std::vector<std::string> row) {
  require(row.size() == header.size(), "csv row has " + std::to_string(row.size()) +
                                           " cells, header has " + std::to_string(header.size()));
  rows.push_back(std::move(row));
}

std::string CsvTable::str() const {
  const auto join = [](const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    return line + '\n';
  };
  std::string out = join(header);
  for (const auto& row : rows) out += join(row);
  return out;
}

void write_csv(const std::filesystem::path& file, const CsvTable& table, nlohmann::json meta) {
  write_file(file, table.str());
  meta["file"] = file.filename().string();
  meta["columns"] = table.header;
  meta["rows"] = table.rows.size();
  write_file(file.string() + ".meta.json", meta.dump(2) + "\n");
}

}  // namespace fgsam::report
