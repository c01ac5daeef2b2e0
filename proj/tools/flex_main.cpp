#include "flex/cli.hpp"

int main(int argc, char** argv) { return flex::cli::dispatch(argc, argv); }
