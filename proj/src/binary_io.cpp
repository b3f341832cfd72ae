#include "layoutret/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace layoutret::inline LAYOUTRET_ABI {

void ByteWriter::put_string16(std::string_view s, const char* what) {
  if (s.size() > 0xFFFF) throw FormatError(std::string(what) + " longer than 65535 bytes");
  put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
  put_bytes(s);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace layoutret::inline LAYOUTRET_ABI
