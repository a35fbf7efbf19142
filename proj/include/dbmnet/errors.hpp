#pragma once

#include <stdexcept>
#include <string>

namespace dbmnet {

// Error categories map 1:1 onto CLI exit codes (see tools/main.cpp).
enum class ErrorKind { config, data, numeric, io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define DBMNET_DEFINE_ERROR(Name, Kind)                                    \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(std::string message)                                \
            : Error(ErrorKind::Kind, std::move(message)) {}               \
    }

DBMNET_DEFINE_ERROR(ConfigError, config);
DBMNET_DEFINE_ERROR(NotFoundError, data);
DBMNET_DEFINE_ERROR(MalformedLayoutError, data);
DBMNET_DEFINE_ERROR(EmptyFoldError, data);
DBMNET_DEFINE_ERROR(UnsampleableError, data);
DBMNET_DEFINE_ERROR(ShapeError, data);
DBMNET_DEFINE_ERROR(LabelError, data);
DBMNET_DEFINE_ERROR(LabelSpaceError, data);
DBMNET_DEFINE_ERROR(LabelMapError, data);
DBMNET_DEFINE_ERROR(EmptyEvalError, data);
DBMNET_DEFINE_ERROR(EmptyClassError, data);
DBMNET_DEFINE_ERROR(DivergedError, numeric);
DBMNET_DEFINE_ERROR(ChecksumError, io);
DBMNET_DEFINE_ERROR(VersionError, io);
DBMNET_DEFINE_ERROR(IoError, io);

#undef DBMNET_DEFINE_ERROR

}  // namespace dbmnet
