#include "rdm/io.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "rdm/error.hpp"

namespace rdm {

namespace {

std::string errno_message(const std::filesystem::path& path) { return path.string() + ": " + std::strerror(errno); }

}  // namespace

MappedFile::MappedFile(const std::filesystem::path& path) : path_(path) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) fail(ErrorCode::IoFailure, errno_message(path));
  struct stat st{};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    fail(ErrorCode::IoFailure, errno_message(path));
  }
  size_ = static_cast<std::size_t>(st.st_size);
  if (size_ > 0) {
    void* p = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd, 0);
    if (p == MAP_FAILED) {
      ::close(fd);
      fail(ErrorCode::IoFailure, errno_message(path));
    }
    data_ = static_cast<const std::uint8_t*>(p);
  }
  ::close(fd);
}

MappedFile::~MappedFile() {
  if (data_ != nullptr) ::munmap(const_cast<std::uint8_t*>(data_), size_);
}

std::size_t MappedFile::resident_bytes() const {
  if (data_ == nullptr) return 0;
  const auto page = static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
  const std::size_t pages = (size_ + page - 1) / page;
  std::vector<unsigned char> residency(pages);
  if (::mincore(const_cast<std::uint8_t*>(data_), size_, residency.data()) != 0) return size_;
  std::size_t resident = 0;
  for (std::size_t i = 0; i < pages; ++i) {
    if ((residency[i] & 1U) != 0) resident += std::min(page, size_ - i * page);
  }
  return resident;
}

ByteSource ByteSource::from_file(const std::filesystem::path& path) {
  auto mapped = std::make_shared<const MappedFile>(path);
  ByteSource source;
  source.view_ = mapped->bytes();
  source.owner_ = std::move(mapped);
  source.name_ = path.string();
  return source;
}

ByteSource ByteSource::from_bytes(Bytes bytes) {
  auto owned = std::make_shared<const Bytes>(std::move(bytes));
  ByteSource source;
  source.view_ = ByteView(*owned);
  source.owner_ = std::move(owned);
  source.name_ = "<memory>";
  return source;
}

FileSink::FileSink(const std::filesystem::path& path) : path_(path) {
  file_ = std::fopen(path.c_str(), "w+b");
  if (file_ == nullptr) fail(ErrorCode::IoFailure, errno_message(path));
}

FileSink::~FileSink() {
  if (file_ != nullptr) std::fclose(file_);
}

void FileSink::write(ByteView bytes) {
  if (file_ == nullptr) fail(ErrorCode::IoFailure, path_.string() + ": sink closed");
  if (bytes.empty()) return;
  if (std::fwrite(bytes.data(), 1, bytes.size(), file_) != bytes.size()) {
    fail(errno == ENOSPC ? ErrorCode::InsufficientSpace : ErrorCode::IoFailure, errno_message(path_));
  }
  position_ += bytes.size();
}

void FileSink::patch(std::uint64_t offset, ByteView bytes) {
  if (file_ == nullptr) fail(ErrorCode::IoFailure, path_.string() + ": sink closed");
  if (offset + bytes.size() > position_) fail(ErrorCode::IoFailure, "patch past end of " + path_.string());
  if (::fseeko(file_, static_cast<off_t>(offset), SEEK_SET) != 0 ||
      std::fwrite(bytes.data(), 1, bytes.size(), file_) != bytes.size() ||
      ::fseeko(file_, static_cast<off_t>(position_), SEEK_SET) != 0) {
    fail(ErrorCode::IoFailure, errno_message(path_));
  }
}

void FileSink::close() {
  if (file_ == nullptr) return;
  const int rc = std::fclose(file_);
  file_ = nullptr;
  if (rc != 0) fail(ErrorCode::IoFailure, errno_message(path_));
}

void MemorySink::patch(std::uint64_t offset, ByteView bytes) {
  if (offset + bytes.size() > buffer_->size()) fail(ErrorCode::IoFailure, "patch past end of memory sink");
  std::memcpy(buffer_->data() + offset, bytes.data(), bytes.size());
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, path.string() + ": cannot open");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  Bytes out(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size))) {
    fail(ErrorCode::IoFailure, path.string() + ": short read");
  }
  return out;
}

void write_file(const std::filesystem::path& path, ByteView bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoFailure, path.string() + ": write failed");
}

std::uint64_t total_size(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return fs::file_size(path);
  if (!fs::is_directory(path)) fail(ErrorCode::IoFailure, path.string() + ": no such file or directory");
  std::uint64_t total = 0;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (entry.is_regular_file()) total += entry.file_size();
  }
  return total;
}

}  // namespace rdm
