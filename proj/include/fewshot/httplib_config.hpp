#pragma once

// Every translation unit that includes httplib must agree on this macro.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
