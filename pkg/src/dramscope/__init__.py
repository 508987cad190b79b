"""dramscope: trace-driven DRAM timing and energy simulator."""
__version__ = "0.1.0"
