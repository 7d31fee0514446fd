# Funnel tables and plots computed from run directories
