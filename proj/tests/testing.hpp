#pragma once

// torch's precompiled headers define a CHECK macro of their own.
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>
